from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from frfid.classical import h1_estimate
from frfid.plant import (ControllerConfig, DisturbanceConfig, SimulationError, ThetaVector, check_step,
                         default_controller, default_disturbances, default_plant, dynamics, dynamics_jacobian,
                         energy, equilibrium, linearize, numeric_jacobian, simulate_closed_loop, two_mass_plant)
from frfid.sigproc import MultisineSpec, design_multisine, stack_spectral, to_spectral

Q = np.array([-0.3, 0.5, 0.2])


def test_analytic_jacobian_matches_finite_differences():
    model = default_plant()
    rng = np.random.default_rng(0)
    eq = equilibrium(model, Q)
    for _ in range(5):
        x = eq.x0 + 0.05 * rng.standard_normal(model.n_x)
        u = eq.u0 + 0.1 * rng.standard_normal(model.n_axes)
        A, B = dynamics_jacobian(x, u, model)
        An, Bn = numeric_jacobian(x, u, model)
        assert np.linalg.norm(A - An) <= 1e-6 * np.linalg.norm(A)
        assert np.linalg.norm(B - Bn) <= 1e-6 * np.linalg.norm(B)


def test_equilibrium_is_fixed_point():
    model = default_plant()
    for q in (Q, np.array([1.0, -1.2, 0.7])):
        eq = equilibrium(model, q)
        dx = dynamics(eq.x0, eq.u0, model)
        assert np.max(np.abs(dx)) < 1e-9
        assert eq.residual <= 1e-10


def test_two_mass_modes_match_textbook_formulas():
    k, Jm, rg, Ja = 1000.0, 1e-4, 0.01, 0.5
    lin = linearize(two_mass_plant(k_g=k, motor_inertia=Jm, gear=rg, arm_inertia=Ja), [0.0])
    w_anti = np.sqrt(k / Ja)
    w_res = np.sqrt(k * (1 / Ja + 1 / (Jm / rg ** 2)))
    w_pole = np.max(np.abs(lin.poles().imag))
    assert w_pole == pytest.approx(w_res, rel=1e-3)
    # undamped: G(jw) is purely imaginary and changes sign at the antiresonance
    w_zero = brentq(lambda w: lin.frf([w])[0, 0, 0].imag, 0.8 * w_anti, 1.2 * w_anti, xtol=1e-12)
    assert w_zero == pytest.approx(w_anti, rel=1e-3)


def test_rigid_limit_is_one_inertia():
    Jm, rg, Ja, c = 1e-4, 0.01, 1.0, 1e-4
    lin = linearize(two_mass_plant(k_g=1e8, d_g=0.0, motor_inertia=Jm, gear=rg, arm_inertia=Ja, friction=c),
                    [0.0])
    J = Jm + rg ** 2 * Ja
    pole = -c / J
    assert np.min(np.abs(lin.poles() - pole)) <= 0.01 * abs(pole)
    w = np.array([0.2, 2.0, 20.0])
    np.testing.assert_allclose(lin.frf(w)[:, 0, 0], 1 / (1j * w * J + c), rtol=1e-2)


def test_low_frequency_velocity_convention():
    lin = linearize(two_mass_plant(d_g=0.5, friction=1e-4), [0.0])
    g = lin.frf([1e-3])[0, 0, 0]
    assert np.isfinite(g) and g.real > 0  # torque drives motor velocity positively


def test_energy_conserved_without_damping():
    th = ThetaVector(k_g=[7200.0, 6400.0, 1000.0], d_g=[0, 0, 0], k_e=[2.0e4], d_e=[0.0], k_c=[2e7, 2e7, 0])
    model = default_plant(th)
    model = replace(model, friction=np.zeros(3), gravity=0.0)
    rng = np.random.default_rng(1)
    x0 = np.zeros(model.n_x)
    x0[:model.n_axes] = 0.2 * rng.standard_normal(3) / model.gear
    x0[model.n_axes:2 * model.n_axes] = model.gear * x0[:model.n_axes] + 0.01 * rng.standard_normal(3)
    x0[2 * model.n_axes:model.n_axes + model.n_p] = 0.01 * rng.standard_normal(model.n_e)
    x0[model.n_axes + model.n_p:] = 0.1 * rng.standard_normal(model.n_axes + model.n_p)
    u = np.zeros(3)
    sol = solve_ivp(lambda t, x: dynamics(x, u, model), (0, 10), x0, method="DOP853", rtol=1e-10, atol=1e-10)
    E0, E1 = energy(x0, model), energy(sol.y[:, -1], model)
    assert abs(E1 - E0) <= 1e-6 * abs(E0)


def test_mirrored_configurations_without_gravity():
    model = replace(default_plant(ThetaVector(k_g=[7200.0, 6400.0, 1000.0], d_g=[8.0, 5.0, 0.6],
                                              k_e=[2.0e4], d_e=[6.0])), gravity=0.0)
    w = 2 * np.pi * np.geomspace(1, 100, 30)
    np.testing.assert_allclose(linearize(model, Q).frf(w), linearize(model, -Q).frf(w), rtol=1e-9, atol=1e-12)


def test_linearization_stable_with_damping():
    model = replace(default_plant(), gravity=0.0)
    lam = linearize(model, Q).poles()
    scale = np.abs(lam).max()
    assert np.all(lam.real <= 1e-9 * scale)
    osc = lam[np.abs(lam.imag) > 1e-6 * scale]
    assert osc.size >= 6 and np.all(osc.real < 0)


def test_step_check():
    lin = linearize(default_plant(), Q)
    assert check_step(lin, 1 / 2500) < 0.5 * 2.785
    with pytest.raises(SimulationError):
        check_step(lin, 1 / 100)


def _sim(amps, seeds=None, dist=None, N=500, fs=500.0, n_periods=1, settle=2):
    spec = MultisineSpec(fs, N, 2.0, 60.0, 30, n_inputs=3, amplitude=1.0, phase_seed=4)
    ms = design_multisine(spec, 3)
    refs = np.concatenate([a * ms.signals for a in amps])
    dist = dist or DisturbanceConfig(position_noise_std=[0.0, 0.0, 0.0])
    seeds = seeds if seeds is not None else list(range(refs.shape[0]))
    recs = simulate_closed_loop(default_plant(), default_controller(), dist, refs, Q, fs, N,
                                n_periods=n_periods, settle_periods=settle, noise_seeds=seeds)
    return ms, recs


def test_small_signal_simulation_matches_linearization():
    amps = [1.0, 0.1, 0.01]
    ms, recs = _sim(amps)
    G0 = linearize(default_plant(), Q).frf(ms.freqs, sample_rate=500.0)
    dev = []
    for a in range(3):
        sp = stack_spectral([to_spectral(r, ms.bins) for r in recs[3 * a:3 * a + 3]])
        G = h1_estimate(sp).G
        dev.append(np.max(np.abs(np.log(np.abs(G) / np.abs(G0)))))
    assert dev[0] > dev[1] > dev[2]
    assert dev[2] < 0.02


def test_simulation_reproducible_and_noisy():
    dist = default_disturbances()
    _, a = _sim([1.0], seeds=[7, 8, 9], dist=dist, N=250, n_periods=2, settle=1)
    _, b = _sim([1.0], seeds=[7, 8, 9], dist=dist, N=250, n_periods=2, settle=1)
    for ra, rb in zip(a, b):
        assert ra.y.tobytes() == rb.y.tobytes() and ra.u.tobytes() == rb.u.tobytes()
    y = a[0].y[0, 250:]
    X = np.fft.rfft(y.reshape(2, 250), axis=1)
    assert np.abs(X[0, 2::2] - X[1, 2::2]).max() > 0


def test_zero_reference_gives_zero_motion():
    N = 100
    recs = simulate_closed_loop(default_plant(), default_controller(),
                                DisturbanceConfig(position_noise_std=[0.0, 0.0, 0.0]),
                                np.zeros((3, N)), Q, 500.0, N, n_periods=1, settle_periods=1)
    assert np.max(np.abs(recs[0].y)) < 1e-9


def test_theta_validation_and_names():
    th = default_plant().theta
    assert th.names() == ["k_g1", "k_g2", "k_g3", "d_g1", "d_g2", "d_g3", "k_e1", "d_e1"]
    th2 = th.with_values(["k_e1"], [3.0])
    assert th2.k_e[0] == 3.0 and th.k_e[0] == 2.0e4
    with pytest.raises(ValueError):
        ThetaVector(k_g=[-1.0], d_g=[0.0])
    with pytest.raises(ValueError):
        ControllerConfig(kp=[-1.0], kv=[0.0], ki=[0.0])

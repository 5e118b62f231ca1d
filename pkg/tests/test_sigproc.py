import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frfid.sigproc import (MultisineSpec, SpectralRecord, TimeRecord, design_multisine, excited_bins,
                           integrate_periodic, period_dft, stack_spectral, to_spectral)


def _tone_record(x, N, fs=100.0, settle=0):
    x = np.atleast_2d(x)
    P = x.shape[1] // N
    return TimeRecord(u=x, y=x, r=None, sample_rate=fs, period_samples=N, n_periods=P - settle,
                      settle_periods=settle)


def test_single_line_is_pure_sinusoid():
    N, k, A = 256, 13, 0.7
    ms = design_multisine(MultisineSpec(100.0, N, 1.0, 40.0, 1, amplitude=A, lines=[k]), 1)
    x = ms.signals[0, 0]
    n = np.arange(N)
    phi = np.angle(ms.phasors[0, 0, 0])
    np.testing.assert_allclose(x, A * np.cos(2 * np.pi * k * n / N + phi), atol=1e-12)


def test_two_input_block_is_hadamard_times_common_phase():
    A = 2.0
    spec = MultisineSpec(100.0, 512, 1.0, 40.0, 12, n_inputs=2, amplitude=A, input_phases="common")
    ms = design_multisine(spec, 2)
    for l in range(ms.bins.size):
        U = ms.phasors[:, :, l].T  # (n_u, n_e)
        c = U[0, 0] / abs(U[0, 0])
        np.testing.assert_allclose(U / c, A / 2 * np.array([[1, 1], [1, -1]]), atol=1e-14)
        s = np.linalg.svd(U, compute_uv=False)
        assert s[0] / s[-1] == pytest.approx(1.0, abs=1e-12)


def test_paper_grid_line_count_and_parity():
    bins = excited_bins(MultisineSpec(2000.0, 56000, 4.0, 80.0, 336))
    assert bins.size <= 336
    assert np.all(bins % 2 == 1)
    assert np.all(np.diff(bins) > 0)
    f = bins * 2000.0 / 56000
    assert f.min() >= 4.0 and f.max() <= 80.0


def test_rejects_bad_specs():
    with pytest.raises(ValueError):
        excited_bins(MultisineSpec(100.0, 512, 1.0, 40.0, 0))
    spec = MultisineSpec(100.0, 500, 1.0, 40.0, 10, offset_sine=(1.0, 0.1), lines=[5, 7, 9])
    with pytest.raises(ValueError):
        design_multisine(spec)


def test_offset_sine_present_but_not_excited():
    spec = MultisineSpec(100.0, 1000, 2.0, 40.0, 20, offset_sine=(0.5, 0.3))
    ms = design_multisine(spec)
    X = period_dft(ms.signals[0], 1000)
    assert abs(X[0, 5]) == pytest.approx(0.15, rel=1e-12)
    assert 5 not in ms.bins


def test_unit_cosine_gives_half():
    N, k, fs = 200, 7, 50.0
    n = np.arange(N)
    x = np.cos(2 * np.pi * k * n / N)
    sp = to_spectral(_tone_record(x, N, fs), np.array([3, 5, 7, 9]))
    np.testing.assert_allclose(np.abs(sp.Y[:, 0, 0]), [0, 0, 0.5, 0], atol=1e-14)
    assert sp.freqs[2] == pytest.approx(2 * np.pi * k * fs / N)


def test_settle_and_repeated_periods():
    N, k = 128, 5
    x1 = np.sin(2 * np.pi * k * np.arange(N) / N + 0.3)
    one = to_spectral(_tone_record(x1, N), np.array([k]))
    x3 = np.tile(x1, 4)
    x3[:N] += 10.0  # transient garbage in the settle period
    three = to_spectral(_tone_record(x3, N, settle=1), np.array([k]))
    np.testing.assert_allclose(three.Y, one.Y, atol=1e-13)


def test_period_averaging_reduces_noise_variance():
    # Monte-Carlo oracle: variance of the averaged DFT shrinks by P
    rng = np.random.default_rng(0)
    N, P, trials, k = 64, 4, 1000, 9
    v1 = np.empty(trials, dtype=complex)
    vP = np.empty(trials, dtype=complex)
    for t in range(trials):
        e = rng.standard_normal(N * P)
        v1[t] = period_dft(e[:N], N)[0, k]
        vP[t] = period_dft(e, N)[0, k]
    ratio = np.var(v1) / np.var(vP)
    assert ratio == pytest.approx(P, rel=0.15)


@settings(max_examples=30, deadline=None)
@given(N=st.integers(8, 300).map(lambda n: 2 * n), seed=st.integers(0, 2 ** 31))
def test_parseval(N, seed):
    x = np.random.default_rng(seed).standard_normal(N)
    X = period_dft(x, N)[0]
    power = abs(X[0]) ** 2 + 2 * np.sum(np.abs(X[1:-1]) ** 2) + abs(X[-1]) ** 2
    assert power == pytest.approx(np.mean(x ** 2), rel=1e-10)


@pytest.mark.parametrize("n_u", [1, 2, 3, 4])
def test_block_orthogonality(n_u):
    spec = MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=n_u, amplitude=1.3, phase_seed=3)
    ms = design_multisine(spec, 2 * n_u)
    for b in range(2):
        U = ms.phasors[b * n_u:(b + 1) * n_u].transpose(2, 1, 0)  # (L, n_u, n_e)
        UU = U @ U.conj().transpose(0, 2, 1)
        c = UU[:, 0, 0].real
        np.testing.assert_allclose(UU, c[:, None, None] * np.eye(n_u), atol=1e-10 * c.max())


def test_designed_phasors_match_measured_dft():
    spec = MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=3, phase_seed=11)
    ms = design_multisine(spec, 3)
    X = period_dft(ms.signals[1], 1000)[:, ms.bins]
    np.testing.assert_allclose(X, ms.phasors[1], atol=1e-12)


def test_independent_phases_differ_across_inputs():
    ms = design_multisine(MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=2), 2)
    assert not np.allclose(np.angle(ms.phasors[0, 0]), np.angle(ms.phasors[0, 1]))


def test_determinism():
    spec = MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=3, phase_seed=42)
    a = design_multisine(spec, 6).signals
    b = design_multisine(spec, 6).signals
    assert a.tobytes() == b.tobytes()
    c = design_multisine(MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=3, phase_seed=43), 6).signals
    assert not np.array_equal(a, c)


def test_blocks_need_multiple_of_inputs():
    with pytest.raises(ValueError):
        design_multisine(MultisineSpec(200.0, 1000, 2.0, 60.0, 40, n_inputs=3), 4)


def test_integrate_periodic_of_cosine():
    N, fs, k = 400, 100.0, 6
    t = np.arange(N) / fs
    w = 2 * np.pi * k * fs / N
    np.testing.assert_allclose(integrate_periodic(np.cos(w * t), fs), np.sin(w * t) / w, atol=1e-12)


def test_non_integer_periods_rejected():
    with pytest.raises(ValueError):
        period_dft(np.zeros(130), 64)
    with pytest.raises(ValueError):
        period_dft(np.zeros(128), 64, settle_periods=2)


def test_spectral_select_and_stack():
    rng = np.random.default_rng(1)
    f = np.arange(1.0, 6.0)
    mk = lambda: SpectralRecord(f, rng.standard_normal((5, 2, 1)) + 0j, rng.standard_normal((5, 2, 1)) + 0j)
    recs = [mk() for _ in range(3)]
    st_ = stack_spectral(recs)
    assert st_.n_e == 3
    np.testing.assert_array_equal(st_.select([1]).U, recs[1].U)
    with pytest.raises(ValueError):
        SpectralRecord(f[::-1], recs[0].U, recs[0].Y)

"""Flexible-joint serial manipulator in a vertical plane.

State ``x = [q_m, q_a, q_e, dq_m, dq_a, dq_e]``; input: motor torques;
output: motor velocities ``dq_m``. Each axis has a gear spring-damper between
the motor (scaled by the inverse gear ratio ``r_g``) and the arm coordinate
``q_a``. Axes listed in ``elastic_axes`` get an extra flange body between
gear output and link, coupled to the link through a second spring-damper
with deflection ``q_e``.

Absolute link angles are measured from the horizontal; gravity points along
``-y``, so ``q_a = (-pi/2, 0, 0)`` is the arm hanging straight down.
"""
from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .sigproc import TimeRecord, integrate_periodic

__all__ = [
    "ThetaVector",
    "PlantModel",
    "ControllerConfig",
    "DisturbanceConfig",
    "LinearModel",
    "PlantError",
    "SimulationError",
    "dynamics",
    "dynamics_jacobian",
    "equilibrium",
    "linearize",
    "energy",
    "simulate_closed_loop",
    "default_plant",
    "default_controller",
    "default_disturbances",
    "two_mass_plant",
]

logger = logging.getLogger(__name__)


class PlantError(RuntimeError):
    pass


class SimulationError(PlantError):
    pass


@dataclass(frozen=True)
class ThetaVector:
    """Stiffness and damping parameters (SI units).

    ``k_g``/``d_g``: gear stiffness (N m/rad) and damping (N m s/rad) per
    axis, arm side. ``k_e``/``d_e``: flange-to-link elastic pair per elastic
    axis. ``k_c``: cubic gear stiffness (N m/rad^3), zero for linear axes.
    """

    k_g: np.ndarray
    d_g: np.ndarray
    k_e: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_e: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k_c: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("k_g", "d_g", "k_e", "d_e"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        k3 = np.zeros_like(self.k_g) if self.k_c is None else np.asarray(self.k_c, dtype=float)
        object.__setattr__(self, "k_c", np.broadcast_to(k3, self.k_g.shape).copy())
        if self.d_g.shape != self.k_g.shape or self.d_e.shape != self.k_e.shape:
            raise ValueError("stiffness and damping arrays must have matching shapes")
        if np.any(self.k_g <= 0) or np.any(self.k_e <= 0):
            raise ValueError("stiffnesses must be positive")
        if np.any(self.d_g < 0) or np.any(self.d_e < 0) or np.any(self.k_c < 0):
            raise ValueError("dampings and cubic stiffnesses must be non-negative")

    _GROUPS = ("k_g", "d_g", "k_e", "d_e", "k_c")

    def names(self, include_cubic: bool = False) -> list[str]:
        groups = self._GROUPS if include_cubic else self._GROUPS[:4]
        return [f"{g}{i + 1}" for g in groups for i in range(getattr(self, g).size)]

    def as_dict(self, include_cubic: bool = True) -> dict:
        return {n: v for n, v in zip(self.names(include_cubic), self.to_vector(include_cubic=include_cubic))}

    def to_vector(self, names: Optional[Sequence[str]] = None, include_cubic: bool = False) -> np.ndarray:
        full = np.concatenate([getattr(self, g) for g in (self._GROUPS if include_cubic else self._GROUPS[:4])])
        if names is None:
            return full
        d = self.as_dict()
        return np.array([d[n] for n in names])

    def with_values(self, names: Sequence[str], values) -> "ThetaVector":
        arrays = {g: getattr(self, g).copy() for g in self._GROUPS}
        for name, v in zip(names, np.asarray(values, dtype=float)):
            g, idx = _split_name(name)
            arrays[g][idx] = v
        return ThetaVector(**arrays)

    def units(self, name: str) -> str:
        g, _ = _split_name(name)
        return {"k_g": "N*m/rad", "k_e": "N*m/rad", "d_g": "N*m*s/rad", "d_e": "N*m*s/rad",
                "k_c": "N*m/rad^3"}[g]


def _split_name(name: str) -> tuple[str, int]:
    m = re.fullmatch(r"(k_g|d_g|k_e|d_e|k_c)(\d+)", name)
    if m is None or int(m.group(2)) < 1:
        raise KeyError(f"unknown parameter name {name!r}")
    return m.group(1), int(m.group(2)) - 1


@dataclass(frozen=True)
class PlantModel:
    """Planar flexible-joint chain with known rigid-body parameters."""

    motor_inertia: np.ndarray
    gear: np.ndarray
    link_mass: np.ndarray
    link_length: np.ndarray
    link_com: np.ndarray
    link_inertia: np.ndarray
    theta: ThetaVector
    friction: np.ndarray
    elastic_axes: tuple = ()
    flange_inertia: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("motor_inertia", "gear", "link_mass", "link_length", "link_com",
                     "link_inertia", "friction", "flange_inertia"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "elastic_axes", tuple(int(a) for a in self.elastic_axes))
        n = self.n_axes
        for name in ("gear", "link_mass", "link_length", "link_com", "link_inertia", "friction"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
        if np.any(self.motor_inertia <= 0) or np.any(self.link_inertia <= 0) or np.any(self.link_mass <= 0):
            raise ValueError("inertias and masses must be positive")
        if np.any(self.gear == 0):
            raise ValueError("gear ratios must be nonzero")
        if self.flange_inertia.shape != (len(self.elastic_axes),) or np.any(self.flange_inertia <= 0):
            raise ValueError("need one positive flange inertia per elastic axis")
        if self.theta.k_g.shape != (n,) or self.theta.k_e.shape != (len(self.elastic_axes),):
            raise ValueError("theta does not match the axis layout")
        if len(set(self.elastic_axes)) != len(self.elastic_axes) or any(not 0 <= a < n for a in self.elastic_axes):
            raise ValueError("invalid elastic_axes")
        H, h, S, F = _geometry(self)
        object.__setattr__(self, "_H", H)
        object.__setattr__(self, "_h", h)
        object.__setattr__(self, "_S", S)
        object.__setattr__(self, "_F", F)

    @property
    def n_axes(self) -> int:
        return self.motor_inertia.size

    @property
    def n_e(self) -> int:
        return len(self.elastic_axes)

    @property
    def n_p(self) -> int:
        return self.n_axes + self.n_e

    @property
    def n_x(self) -> int:
        return 2 * (self.n_axes + self.n_p)

    def with_theta(self, theta: ThetaVector) -> "PlantModel":
        return replace(self, theta=theta)


def _geometry(model: PlantModel):
    n, ne = model.n_axes, model.n_e
    m, l, c = model.link_mass, model.link_length, model.link_com
    Lmat = np.zeros((n, n))  # Lmat[i, k]: lever of link k's angle in COM of link i
    for i in range(n):
        Lmat[i, :i] = l[:i]
        Lmat[i, i] = c[i]
    H = np.einsum("i,ik,il->kl", m, Lmat, Lmat)
    h = m @ Lmat
    # link angle phi = S p, flange angle psi = F p, p = [q_a, q_e]
    S = np.zeros((n, n + ne))
    F = np.zeros((ne, n + ne))
    for i in range(n):
        S[i, : i + 1] = 1.0
        for e, ax in enumerate(model.elastic_axes):
            if ax <= i:
                S[i, n + e] = 1.0
    for e, ax in enumerate(model.elastic_axes):
        F[e, : ax + 1] = 1.0
        for e2, ax2 in enumerate(model.elastic_axes):
            if ax2 < ax:
                F[e, n + e2] = 1.0
    return H, h, S, F


def _split_state(model: PlantModel, x):
    n, npp = model.n_axes, model.n_p
    qm = x[..., :n]
    p = x[..., n:n + npp]
    dqm = x[..., n + npp:2 * n + npp]
    dp = x[..., 2 * n + npp:]
    return qm, p, dqm, dp


def _gear_torque(model: PlantModel, qm, qa, dqm, dqa):
    th = model.theta
    delta = model.gear * qm - qa
    ddelta = model.gear * dqm - dqa
    return th.k_g * delta + th.k_c * delta ** 3 + th.d_g * ddelta, delta


def _arm_terms(model: PlantModel, p, dp):
    """Mass matrix, Coriolis and gravity vectors in arm coordinates (batched)."""
    S, F, H = model._S, model._F, model._H
    phi = p @ S.T
    dphi = dp @ S.T
    diff = phi[..., :, None] - phi[..., None, :]
    cosd, sind = np.cos(diff), np.sin(diff)
    Mphi = H * cosd + np.diag(model.link_inertia)
    M = S.T @ Mphi @ S + F.T @ (model.flange_inertia[:, None] * F)
    cphi = np.einsum("...kl,...l->...k", H * sind, dphi ** 2)
    gphi = model.gravity * model._h * np.cos(phi)
    return M, cphi @ S, gphi @ S, (phi, dphi, cosd, sind, Mphi)


def dynamics(x, u, model: PlantModel):
    """State derivative; ``x`` and ``u`` may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = model.n_axes
    qm, p, dqm, dp = _split_state(model, x)
    qa, qe = p[..., :n], p[..., n:]
    dqa, dqe = dp[..., :n], dp[..., n:]
    tau_g, _ = _gear_torque(model, qm, qa, dqm, dqa)
    tau_e = -model.theta.k_e * qe - model.theta.d_e * dqe
    ddqm = (u - model.friction * dqm - model.gear * tau_g) / model.motor_inertia
    M, c, g, _ = _arm_terms(model, p, dp)
    rhs = np.concatenate([tau_g, tau_e], axis=-1) - c - g
    ddp = np.linalg.solve(M, rhs[..., None])[..., 0]
    return np.concatenate([dqm, dp, ddqm, ddp], axis=-1)


def dynamics_jacobian(x, u, model: PlantModel):
    """Analytic ``(df/dx, df/du)`` at a single state."""
    x = np.asarray(x, dtype=float)
    n, npp = model.n_axes, model.n_p
    qm, p, dqm, dp = _split_state(model, x)
    qa, qe = p[:n], p[n:]
    dqa, dqe = dp[:n], dp[n:]
    th, rg = model.theta, model.gear
    tau_g, delta = _gear_torque(model, qm, qa, dqm, dqa)
    kt = th.k_g + 3 * th.k_c * delta ** 2
    tau_e = -th.k_e * qe - th.d_e * dqe
    M, c, g, (phi, dphi, cosd, sind, _) = _arm_terms(model, p, dp)
    S, H = model._S, model._H
    rhs = np.concatenate([tau_g, tau_e]) - c - g
    acc = np.linalg.solve(M, rhs)

    # d(rhs)/d(q_m, p, dq_m, dp)
    dQ_dqm = np.zeros((npp, n)); dQ_dqm[:n] = np.diag(kt * rg)
    dQ_dp = np.zeros((npp, npp)); dQ_dp[:n, :n] = -np.diag(kt)
    dQ_dp[n:, n:] = -np.diag(th.k_e)
    dQ_ddqm = np.zeros((npp, n)); dQ_ddqm[:n] = np.diag(th.d_g * rg)
    dQ_ddp = np.zeros((npp, npp)); dQ_ddp[:n, :n] = -np.diag(th.d_g)
    dQ_ddp[n:, n:] = -np.diag(th.d_e)

    Hs, Hc = H * sind, H * cosd
    dc_dphi = np.diag(Hc @ dphi ** 2) - Hc * dphi ** 2
    dc_ddphi = 2 * Hs * dphi
    dg_dphi = -np.diag(model.gravity * model._h * np.sin(phi))
    aphi = S @ acc
    sv = Hs @ aphi
    T = -np.diag(sv) + Hs * aphi  # (dM_phi/dphi_m @ aphi)[k]
    dMa_dp = S.T @ T @ S

    drhs_dp = dQ_dp - S.T @ (dc_dphi + dg_dphi) @ S
    drhs_ddp = dQ_ddp - S.T @ dc_ddphi @ S
    dacc_dqm = np.linalg.solve(M, dQ_dqm)
    dacc_dp = np.linalg.solve(M, drhs_dp - dMa_dp)
    dacc_ddqm = np.linalg.solve(M, dQ_ddqm)
    dacc_ddp = np.linalg.solve(M, drhs_ddp)

    Jm = model.motor_inertia
    dm_dqm = -np.diag(rg * kt * rg / Jm)
    dm_dp = np.zeros((n, npp)); dm_dp[:, :n] = np.diag(rg * kt / Jm)
    dm_ddqm = -np.diag((model.friction + rg * th.d_g * rg) / Jm)
    dm_ddp = np.zeros((n, npp)); dm_ddp[:, :n] = np.diag(rg * th.d_g / Jm)

    nx = model.n_x
    A = np.zeros((nx, nx))
    A[:n + npp, n + npp:] = np.eye(n + npp)
    A[n + npp:2 * n + npp] = np.hstack([dm_dqm, dm_dp, dm_ddqm, dm_ddp])
    A[2 * n + npp:] = np.hstack([dacc_dqm, dacc_dp, dacc_ddqm, dacc_ddp])
    B = np.zeros((nx, n))
    B[n + npp:2 * n + npp] = np.diag(1.0 / Jm)
    return A, B


def numeric_jacobian(x, u, model: PlantModel, step: float = 1e-6):
    """Central-difference ``(df/dx, df/du)`` for cross-checking."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    A = np.zeros((x.size, x.size))
    B = np.zeros((x.size, u.size))
    for i in range(x.size):
        hstep = step * max(1.0, abs(x[i]))
        e = np.zeros_like(x); e[i] = hstep
        A[:, i] = (dynamics(x + e, u, model) - dynamics(x - e, u, model)) / (2 * hstep)
    for i in range(u.size):
        hstep = step * max(1.0, abs(u[i]))
        e = np.zeros_like(u); e[i] = hstep
        B[:, i] = (dynamics(x, u + e, model) - dynamics(x, u - e, model)) / (2 * hstep)
    return A, B


def energy(x, model: PlantModel) -> float:
    """Kinetic plus elastic plus gravitational energy."""
    qm, p, dqm, dp = _split_state(model, np.asarray(x, dtype=float))
    n = model.n_axes
    M, _, _, (phi, *_rest) = _arm_terms(model, p, dp)
    delta = model.gear * qm - p[:n]
    th = model.theta
    kin = 0.5 * np.sum(model.motor_inertia * dqm ** 2) + 0.5 * dp @ M @ dp
    pot = np.sum(0.5 * th.k_g * delta ** 2 + 0.25 * th.k_c * delta ** 4) + 0.5 * np.sum(th.k_e * p[n:] ** 2)
    grav = model.gravity * np.sum(model._h * np.sin(phi))
    return float(kin + pot + grav)


@dataclass(frozen=True)
class Equilibrium:
    x0: np.ndarray
    u0: np.ndarray
    q_a: np.ndarray
    q_e: np.ndarray
    q_m: np.ndarray
    residual: float


def _newton(fun, jac, z0, tol=1e-12, max_iter=100):
    z = np.array(z0, dtype=float)
    r = fun(z)
    for _ in range(max_iter):
        if np.max(np.abs(r), initial=0.0) <= tol:
            return z, r
        step = np.linalg.solve(np.atleast_2d(jac(z)), r)
        t = 1.0
        while True:
            z_new = z - t * step
            r_new = fun(z_new)
            if np.max(np.abs(r_new), initial=0.0) < np.max(np.abs(r)) or t < 1e-6:
                break
            t *= 0.5
        z, r = z_new, r_new
    return z, r


def equilibrium(model: PlantModel, q_a) -> Equilibrium:
    """Static equilibrium at arm configuration ``q_a``.

    Solves the flange deflections and the gear deflections (cubic springs
    included) that balance gravity, each by damped Newton iteration to a
    torque residual of 1e-12.
    """
    n, ne = model.n_axes, model.n_e
    q_a = np.asarray(q_a, dtype=float)
    if q_a.shape != (n,):
        raise ValueError(f"configuration needs {n} angles")
    th = model.theta
    zeros_p = np.zeros(model.n_p)

    def grav(qe):
        _, _, g, _ = _arm_terms(model, np.concatenate([q_a, qe]), zeros_p)
        return g

    def res_e(qe):
        return th.k_e * qe + grav(qe)[n:]

    def jac_e(qe):
        p = np.concatenate([q_a, qe])
        phi = model._S @ p
        dg = model._S.T @ np.diag(-model.gravity * model._h * np.sin(phi)) @ model._S
        return np.diag(th.k_e) + dg[n:, n:]

    qe = np.zeros(ne)
    if ne:
        qe, r = _newton(res_e, jac_e, qe)
        if np.max(np.abs(r)) > 1e-10 * max(1.0, np.max(np.abs(grav(qe)))):
            raise PlantError(f"flange equilibrium did not converge, residual {np.max(np.abs(r)):.3g}")
    tau = grav(qe)[:n]

    def res_g(d):
        return th.k_g * d + th.k_c * d ** 3 - tau

    def jac_g(d):
        return np.diag(th.k_g + 3 * th.k_c * d ** 2)

    delta, r = _newton(res_g, jac_g, tau / th.k_g)
    resid = float(np.max(np.abs(r), initial=0.0))
    if resid > 1e-10 * max(1.0, np.max(np.abs(tau))):
        raise PlantError(f"gear equilibrium did not converge, residual {resid:.3g}")
    q_m = (q_a + delta) / model.gear
    x0 = np.concatenate([q_m, q_a, qe, np.zeros(n + model.n_p)])
    u0 = model.gear * tau
    return Equilibrium(x0=x0, u0=u0, q_a=q_a, q_e=qe, q_m=q_m, residual=resid)


@dataclass(frozen=True)
class LinearModel:
    """Linearization ``dx = A x + B u``, ``y = C x`` around an equilibrium."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    eq: Equilibrium

    def frf(self, omega, sample_rate: Optional[float] = None) -> np.ndarray:
        """FRF ``(L, n_y, n_u)`` at angular frequencies ``omega``.

        Without ``sample_rate`` this is ``C (jw I - A)^-1 B``. With it, the
        zero-order-hold discretization ``C (e^{jwTs} I - Phi)^-1 Gamma`` is
        returned, which is what sampled data with held inputs measure.
        """
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        nx = self.A.shape[0]
        if sample_rate is None:
            Amat, Bmat = self.A, self.B
            z = 1j * omega
        else:
            Amat, Bmat = self.discretize(1.0 / sample_rate)
            z = np.exp(1j * omega / sample_rate)
        lhs = z[:, None, None] * np.eye(nx) - Amat
        X = np.linalg.solve(lhs, np.broadcast_to(Bmat.astype(complex), (omega.size,) + Bmat.shape))
        return self.C @ X

    def discretize(self, ts: float):
        nx, nu = self.B.shape
        aug = np.zeros((nx + nu, nx + nu))
        aug[:nx, :nx] = self.A
        aug[:nx, nx:] = self.B
        E = expm(aug * ts)
        return E[:nx, :nx], E[:nx, nx:]

    def poles(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)


def linearize(model: PlantModel, q_a, method: str = "analytic") -> LinearModel:
    """First-order expansion of the dynamics at the equilibrium for ``q_a``."""
    eq = equilibrium(model, q_a)
    if method == "analytic":
        A, B = dynamics_jacobian(eq.x0, eq.u0, model)
    elif method == "numeric":
        A, B = numeric_jacobian(eq.x0, eq.u0, model)
    else:
        raise ValueError(f"unknown method {method!r}")
    n, npp = model.n_axes, model.n_p
    C = np.zeros((n, model.n_x))
    C[:, n + npp:2 * n + npp] = np.eye(n)
    return LinearModel(A=A, B=B, C=C, eq=eq)


@dataclass(frozen=True)
class ControllerConfig:
    """Cascaded P position / PI velocity controller on the motor side.

    ``kp`` in 1/s, ``kv`` in N m s/rad, ``ki`` in N m/rad, all per axis.
    """

    kp: np.ndarray
    kv: np.ndarray
    ki: np.ndarray
    saturation: float = np.inf

    def __post_init__(self):
        for name in ("kp", "kv", "ki"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(arr < 0):
                raise ValueError("controller gains must be non-negative")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class DisturbanceConfig:
    """Noise and position-periodic disturbances.

    Harmonic lists hold ``(axis, order, amplitude, phase)`` with ``order`` in
    cycles per motor revolution. Ripple amplitudes in N m, position
    amplitudes in rad (motor side).
    """

    position_noise_std: np.ndarray = field(default_factory=lambda: np.zeros(0))
    torque_ripple: tuple = ()
    position_harmonics: tuple = ()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position_noise_std",
                           np.atleast_1d(np.asarray(self.position_noise_std, dtype=float)))
        if np.any(self.position_noise_std < 0):
            raise ValueError("noise std must be non-negative")
        for h in tuple(self.torque_ripple) + tuple(self.position_harmonics):
            if len(h) != 4 or h[2] < 0:
                raise ValueError(f"bad harmonic spec {h}")
        object.__setattr__(self, "torque_ripple", tuple(tuple(h) for h in self.torque_ripple))
        object.__setattr__(self, "position_harmonics", tuple(tuple(h) for h in self.position_harmonics))


def _harmonics(spec, n, qm):
    out = np.zeros_like(qm)
    for axis, order, amp, phase in spec:
        out[..., int(axis)] += amp * np.sin(order * qm[..., int(axis)] + phase)
    return out


RK4_LIMIT = 2.785  # RK4 stability boundary on the negative real axis


def check_step(lin: LinearModel, h: float, margin: float = 0.5) -> float:
    """Reject integration steps too large for the fastest linearized mode."""
    lam = np.max(np.abs(lin.poles()))
    if lam * h > margin * RK4_LIMIT:
        raise SimulationError(f"step {h:.3g} s too large: fastest mode {lam:.3g} rad/s "
                              f"needs h <= {margin * RK4_LIMIT / lam:.3g} s")
    return lam * h


def simulate_closed_loop(model: PlantModel, controller: ControllerConfig, disturbances: DisturbanceConfig,
                         speed_ref, q_a, sample_rate: float, period_samples: int, n_periods: int,
                         settle_periods: int = 1, substeps: int = 5, noise_seeds=None,
                         ) -> list[TimeRecord]:
    """Closed-loop simulation around configuration ``q_a``.

    ``speed_ref`` holds one period of the motor speed reference,
    ``(n_axes, N)`` or batched ``(B, n_axes, N)``; every batch member is an
    independent experiment with its own noise stream (``noise_seeds``).
    The position reference is the periodic integral of the speed reference.
    The controller runs at ``sample_rate`` and holds its torque between
    samples; the plant is integrated with fixed-step RK4 at ``Ts/substeps``.

    Logged signals per sample: ``u`` = applied torque (controller + ripple),
    ``y`` = motor velocity plus the first difference of the position
    measurement error, ``r`` = speed reference.
    """
    s = np.asarray(speed_ref, dtype=float)
    single = s.ndim == 2
    if single:
        s = s[None]
    Bn, n, N = s.shape
    if n != model.n_axes or N != period_samples:
        raise ValueError("speed reference shape does not match plant/period")
    if substeps < 5:
        raise ValueError("need at least 5 integration substeps per sample")
    ts = 1.0 / sample_rate
    h = ts / substeps
    lin = linearize(model, q_a)
    check_step(lin, h)
    eq = lin.eq

    if noise_seeds is None:
        noise_seeds = [disturbances.seed + b for b in range(Bn)]
    if len(noise_seeds) != Bn:
        raise ValueError("need one noise seed per experiment")
    P = n_periods + settle_periods
    T = P * N
    std = np.broadcast_to(disturbances.position_noise_std, (n,)) if disturbances.position_noise_std.size else np.zeros(n)
    noise = np.empty((Bn, T + 1, n))
    for b, sd in enumerate(noise_seeds):
        noise[b] = np.random.default_rng(sd).standard_normal((T + 1, n)) * std

    q_rel = integrate_periodic(s, sample_rate)                 # (B, n, N)
    s_full = np.tile(s, (1, 1, P))
    qref_rel = np.tile(q_rel, (1, 1, P))

    kp, kv, ki = (np.broadcast_to(g, (n,)) for g in (controller.kp, controller.kv, controller.ki))
    sat = controller.saturation

    x = np.broadcast_to(eq.x0, (Bn, model.n_x)).copy()
    qm0 = np.broadcast_to(eq.q_m, (Bn, n))
    pos_off = _harmonics(disturbances.position_harmonics, n, qm0)
    q_target = qm0 + pos_off
    integ = np.broadcast_to(eq.u0 - _harmonics(disturbances.torque_ripple, n, qm0), (Bn, n)).copy()
    e_prev = noise[:, 0] + pos_off

    U = np.empty((Bn, n, T))
    Y = np.empty((Bn, n, T))
    n_sat = 0
    i_dqm = slice(n + model.n_p, 2 * n + model.n_p)
    for k in range(T):
        qm = x[:, :n]
        dqm = x[:, i_dqm]
        e_pos = noise[:, k + 1] + _harmonics(disturbances.position_harmonics, n, qm)
        q_meas = qm + e_pos
        y = dqm + (e_pos - e_prev) / ts
        e_prev = e_pos
        v_ref = s_full[:, :, k] + kp * (q_target + qref_rel[:, :, k] - q_meas)
        ev = v_ref - y
        u_ctrl = kv * ev + integ
        integ = integ + ki * ev * ts
        if np.isfinite(sat):
            clipped = np.clip(u_ctrl, -sat, sat)
            n_sat += int(np.any(clipped != u_ctrl, axis=1).sum())
            u_ctrl = clipped
        u = u_ctrl + _harmonics(disturbances.torque_ripple, n, qm)
        U[:, :, k] = u
        Y[:, :, k] = y
        for _ in range(substeps):
            k1 = dynamics(x, u, model)
            k2 = dynamics(x + 0.5 * h * k1, u, model)
            k3 = dynamics(x + 0.5 * h * k2, u, model)
            k4 = dynamics(x + h * k3, u, model)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        dev = np.max(np.abs(x - eq.x0))
        if not np.isfinite(dev) or dev > 1e6:
            raise SimulationError(f"simulation diverged at sample {k} (max state deviation {dev:.3g})")
    if n_sat > 0.01 * T * Bn:
        warnings.warn(f"torque saturation active in {n_sat / (T * Bn):.1%} of samples; "
                      "linear estimates will be biased", RuntimeWarning, stacklevel=2)

    records = []
    for b in range(Bn):
        records.append(TimeRecord(u=U[b], y=Y[b], r=s_full[b], sample_rate=sample_rate,
                                  period_samples=N, n_periods=n_periods, settle_periods=settle_periods,
                                  meta={"noise_seed": int(noise_seeds[b]), "q_a": [float(v) for v in q_a]}))
    return records


def default_plant(theta: Optional[ThetaVector] = None) -> PlantModel:
    """Three-axis shoulder-elbow-wrist arm, flange elasticity on axis 1,
    cubic gear stiffness on axes 1-2."""
    if theta is None:
        theta = ThetaVector(k_g=[7200.0, 6400.0, 1000.0], d_g=[8.0, 5.0, 0.6],
                            k_e=[2.0e4], d_e=[25.0], k_c=[2.0e7, 2.0e7, 0.0])
    m = np.array([8.0, 5.0, 3.0])
    l = np.array([0.5, 0.4, 0.2])
    return PlantModel(
        motor_inertia=[2.0e-4, 1.5e-4, 1.6e-5],
        gear=[1 / 100, 1 / 80, 1 / 50],
        link_mass=m,
        link_length=l,
        link_com=[0.25, 0.2, 0.1],
        link_inertia=m * l ** 2 / 12,
        theta=theta,
        friction=[2.0e-4, 1.5e-4, 5.0e-5],
        elastic_axes=(0,),
        flange_inertia=[3.0],
    )


def default_controller() -> ControllerConfig:
    return ControllerConfig(kp=[10.0, 10.0, 10.0], kv=[0.04, 0.03, 0.004],
                            ki=[0.5, 0.4, 0.05], saturation=20.0)


def default_disturbances(seed: int = 0) -> DisturbanceConfig:
    return DisturbanceConfig(
        position_noise_std=[2e-2, 2e-2, 2e-2],
        torque_ripple=((0, 1, 2e-3, 0.3), (1, 1, 2e-3, 1.1), (2, 2, 5e-4, 0.0)),
        position_harmonics=((0, 1, 5e-4, 0.0), (1, 2, 5e-4, 0.7), (2, 1, 5e-4, 2.0)),
        seed=seed,
    )


def two_mass_plant(k_g=1000.0, d_g=0.0, motor_inertia=1e-4, gear=0.01, arm_inertia=1.0,
                   friction=0.0, gravity=0.0) -> PlantModel:
    """Single-axis two-mass drive (point-mass-free link) for analytic checks.

    The arm inertia about the joint equals ``arm_inertia`` (uniform rod
    inertia split into COM inertia and a tiny COM offset).
    """
    mass = 1.0
    com = 1e-3
    return PlantModel(
        motor_inertia=[motor_inertia], gear=[gear], link_mass=[mass], link_length=[2 * com],
        link_com=[com], link_inertia=[arm_inertia - mass * com ** 2],
        theta=ThetaVector(k_g=[k_g], d_g=[d_g]), friction=[friction], gravity=gravity)

"""Gray-box stiffness/damping fit by weighted log-error minimization."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .classical import FrfEstimate
from .plant import PlantError, PlantModel, ThetaVector, linearize

logger = logging.getLogger(__name__)

__all__ = ["WeightingScheme", "FitOptions", "StartRecord", "FitResult", "FitError", "CostTerms",
           "find_modes", "build_weights", "model_frfs", "log_error_cost", "fit_parameters"]

TINY = 1e-300


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightingScheme:
    """Emphasis rules plus, once built, per-configuration weights.

    ``weights[i]`` is ``(L, n_y*n_u)``: the diagonal of ``W`` over
    ``vec(G)`` (column stacking). ``modes[i]`` is ``(n_y, 2)`` holding the
    located antiresonance/resonance per channel in Hz (NaN if not found).
    """

    diag_boost: float = 1.0
    band_boost: float = 1.0
    band_rel: float = 0.2
    inverse_variance: bool = False
    weights: tuple = ()
    modes: tuple = ()

    def __post_init__(self):
        if self.diag_boost <= 0 or self.band_boost <= 0 or not 0 <= self.band_rel < 1:
            raise ValueError("boosts must be positive and 0 <= band_rel < 1")
        for W in self.weights:
            if np.any(~np.isfinite(W)) or np.any(W < 0):
                raise ValueError("weights must be finite and non-negative")

    def rules(self) -> dict:
        return {"diag_boost": self.diag_boost, "band_boost": self.band_boost, "band_rel": self.band_rel,
                "inverse_variance": self.inverse_variance}


def find_modes(f_hz: np.ndarray, mag: np.ndarray) -> tuple[float, float]:
    """First interior local minimum of ``mag`` and the first local maximum after it."""
    m = np.asarray(mag)
    is_min = (m[1:-1] < m[:-2]) & (m[1:-1] <= m[2:])
    is_max = (m[1:-1] > m[:-2]) & (m[1:-1] >= m[2:])
    mins = np.flatnonzero(is_min) + 1
    if mins.size == 0:
        return np.nan, np.nan
    maxs = np.flatnonzero(is_max) + 1
    maxs = maxs[maxs > mins[0]]
    return float(f_hz[mins[0]]), float(f_hz[maxs[0]]) if maxs.size else np.nan


def build_weights(estimates: Sequence[FrfEstimate], model: PlantModel, theta0: ThetaVector, configs,
                  scheme: WeightingScheme = WeightingScheme(), n_grid: int = 4000) -> WeightingScheme:
    """Realize ``scheme`` on the lines of each estimate.

    Modes are located on a dense grid of the continuous-time FRF linearized
    at ``theta0``. The band of channel ``k`` boosts row ``k`` and column
    ``k`` of ``G``; the diagonal boost multiplies ``G_kk``.
    """
    if len(estimates) != len(configs):
        raise ValueError("need one estimate per configuration")
    mdl = model.with_theta(theta0)
    weights, modes = [], []
    for est, q in zip(estimates, configs):
        L, n_y, n_u = est.G.shape
        W = np.ones((L, n_u, n_y))  # [j, i] -> vec index j*n_y + i
        f = est.freqs_hz
        found = np.full((n_y, 2), np.nan)
        boosted = np.zeros((L, n_u, n_y), dtype=bool)
        grid = np.geomspace(f.min(), f.max(), n_grid)
        Gc = linearize(mdl, q).frf(2 * np.pi * grid)
        for k in range(min(n_y, n_u)):
            fa, fr = find_modes(grid, np.abs(Gc[:, k, k]))
            found[k] = fa, fr
            if np.isnan(fr):
                warnings.warn(f"channel {k}: no antiresonance/resonance pair below f_max; band boost skipped",
                              RuntimeWarning, stacklevel=2)
                continue
            band = (np.abs(f - fa) <= scheme.band_rel * fa) | (np.abs(f - fr) <= scheme.band_rel * fr)
            boosted[band, :, k] = True
            boosted[band, k, :] = True
        W[boosted] *= scheme.band_boost
        for k in range(min(n_y, n_u)):
            W[:, k, k] *= scheme.diag_boost
        W = W.reshape(L, -1)
        if scheme.inverse_variance and est.cov is not None:
            var = np.real(np.diagonal(est.cov, axis1=1, axis2=2))
            g2 = np.abs(est.G.transpose(0, 2, 1).reshape(L, -1)) ** 2
            ok = est.cov_valid[:, None] & (var > 0) & (g2 > 0)
            if np.any(ok):  # no usable covariance: unit weights
                iv = np.ones_like(W)
                iv[ok] = g2[ok] / var[ok]
                iv[ok] /= np.median(iv[ok])
                W = W * iv
        weights.append(W)
        modes.append(found)
    return replace(scheme, weights=tuple(weights), modes=tuple(modes))


def model_frfs(model: PlantModel, configs, omega: np.ndarray, sample_rate: Optional[float] = None) -> list:
    return [linearize(model, q).frf(omega, sample_rate=sample_rate) for q in configs]


@dataclass
class CostTerms:
    cost: float
    per_config: np.ndarray
    errors: list
    n_skipped: int


def log_error_cost(theta: ThetaVector, estimates: Sequence[FrfEstimate], weights, model: PlantModel, configs,
                   sample_rate: Optional[float] = None, return_terms: bool = False):
    """Sum over configurations and valid lines of ``E^H W E``.

    ``E = log vec(G_hat) - log vec(G(theta))`` with the phase difference
    wrapped to (-pi, pi]. ``weights`` is a WeightingScheme, a sequence of
    ``(L, n_y*n_u)`` arrays or ``None`` for unit weights.
    """
    if isinstance(weights, WeightingScheme):
        weights = weights.weights
    if weights is None or len(weights) == 0:
        weights = [None] * len(estimates)
    mdl = model.with_theta(theta)
    per, errs, skipped = [], [], 0
    for est, W, q in zip(estimates, weights, configs):
        G = linearize(mdl, q).frf(est.freqs, sample_rate=sample_rate)
        L = est.n_lines
        gh = est.G.transpose(0, 2, 1).reshape(L, -1)
        gm = G.transpose(0, 2, 1).reshape(L, -1)
        ok = est.valid[:, None] & (np.abs(gh) >= TINY) & (np.abs(gm) >= TINY)
        n_zero = int((est.valid[:, None] & ~ok).sum())
        if n_zero:
            warnings.warn(f"{n_zero} zero-magnitude FRF entries excluded", RuntimeWarning, stacklevel=2)
        skipped += int((~est.valid).sum())
        ratio = np.where(ok, gh, 1.0) / np.where(ok, gm, 1.0)
        E = np.where(ok, np.log(np.abs(ratio)) + 1j * np.angle(ratio), 0.0)
        w = np.ones(E.shape) if W is None else W
        per.append(float(np.sum(w * np.abs(E) ** 2)))
        errs.append(E)
    cost = float(np.sum(per))
    if return_terms:
        return CostTerms(cost, np.array(per), errs, skipped)
    return cost


@dataclass(frozen=True)
class FitOptions:
    """``names``: fitted parameters (default: all linear stiffness/damping).

    ``first_step`` caps the first quasi-Newton step in log space, so a
    steep start cannot jump onto a flat region of the cost (e.g. a
    stiffness driven to zero).

    The first start is ``theta0`` itself; the remaining ``n_starts - 1``
    are log-normal perturbations with standard deviation ``perturbation``.
    """

    n_starts: int = 4
    perturbation: float = 0.3
    seed: int = 0
    names: Optional[tuple] = None
    max_iter: int = 200
    gtol: float = 1e-6
    rel_step: float = 1e-6
    first_step: float = 0.1
    sample_rate: Optional[float] = None

    def __post_init__(self):
        if self.n_starts < 1 or self.perturbation < 0 or self.rel_step <= 0 or self.first_step <= 0:
            raise ValueError("invalid fit options")


@dataclass
class StartRecord:
    x0: np.ndarray
    x: np.ndarray
    cost0: float
    cost: float
    n_iter: int
    success: bool
    message: str
    trace: list = field(default_factory=list)


@dataclass
class FitResult:
    theta_hat: ThetaVector
    names: list
    cost: float
    starts: list
    wall_time: float = 0.0

    def best_start(self) -> StartRecord:
        return min((s for s in self.starts if np.isfinite(s.cost)), key=lambda s: s.cost)


def _central_grad(f, z, h):
    g = np.empty_like(z)
    for k in range(z.size):
        e = np.zeros_like(z)
        e[k] = h
        g[k] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def fit_parameters(estimates: Sequence[FrfEstimate], model: PlantModel, configs, weights=None,
                   options: FitOptions = FitOptions(), theta0: Optional[ThetaVector] = None) -> FitResult:
    """Multi-start BFGS over ``log(theta)``.

    ``model`` supplies the rigid-body skeleton and, unless ``theta0`` is
    given, the initial guess. Parameters not listed in ``options.names``
    stay at their ``theta0`` values.
    """
    t_start = time.perf_counter()
    theta0 = model.theta if theta0 is None else theta0
    names = list(options.names) if options.names else theta0.names()
    x_init = theta0.to_vector(names)
    if np.any(x_init <= 0):
        raise FitError("initial parameters must be positive for the log parametrization")
    z_init = np.log(x_init)

    def cost_z(z):
        if not np.all(np.isfinite(z)) or np.any(np.abs(z) > 700):
            return np.inf
        try:
            th = theta0.with_values(names, np.exp(z))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                c = log_error_cost(th, estimates, weights, model, configs, sample_rate=options.sample_rate)
        except (PlantError, ValueError, np.linalg.LinAlgError):
            return np.inf
        return c if np.isfinite(c) else np.inf

    c0 = cost_z(z_init)
    if not np.isfinite(c0):
        raise FitError("cost is not finite at the initial parameters")

    # optimize cost / cost(theta0): same argmin, O(1) gradients for the
    # identity initial Hessian of BFGS, and a path independent of the weight scale
    scale = 1.0 / c0 if c0 > 1e-8 else 1.0

    rng = np.random.default_rng(options.seed)
    z_starts = [z_init] + [z_init + options.perturbation * rng.standard_normal(z_init.size)
                           for _ in range(options.n_starts - 1)]
    starts = []
    for i, z0 in enumerate(z_starts):
        memo = {}

        def f(z):
            key = z.tobytes()
            if key not in memo:
                memo[key] = scale * cost_z(z)
            return memo[key]

        def grad(z):
            g = scale * _central_grad(cost_z, z, options.rel_step)
            return np.where(np.isfinite(g), g, 0.0)

        trace = [cost_z(z0)]
        if not np.isfinite(trace[0]):
            starts.append(StartRecord(np.exp(z0), np.exp(z0), np.inf, np.inf, 0, False, "non-finite start"))
            continue
        g_max = float(np.max(np.abs(grad(z0))))
        h0 = min(1.0, options.first_step / g_max) if g_max > 0 else 1.0
        res = minimize(f, z0, jac=grad, method="BFGS", callback=lambda zk: trace.append(f(zk) / scale),
                       options={"maxiter": options.max_iter, "gtol": options.gtol,
                                "hess_inv0": h0 * np.eye(z0.size)})
        cost = f(res.x) / scale
        starts.append(StartRecord(np.exp(z0), np.exp(res.x), trace[0], cost, int(res.nit), bool(res.success),
                                  str(res.message), trace))
        logger.info("start %d: cost %.6g -> %.6g in %d iterations (%s)", i, trace[0], cost, res.nit, res.message)

    finite = [s for s in starts if np.isfinite(s.cost)]
    if not finite:
        raise FitError("all starts diverged: " + "; ".join(s.message for s in starts))
    best = min(finite, key=lambda s: s.cost)
    theta_hat = theta0.with_values(names, best.x)
    return FitResult(theta_hat, names, best.cost, starts, time.perf_counter() - t_start)

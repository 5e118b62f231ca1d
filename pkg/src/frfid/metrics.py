"""Bias measures for FRF estimates and fitted parameters."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .classical import FrfEstimate
from .plant import ThetaVector

logger = logging.getLogger(__name__)

__all__ = ["BiasReport", "frf_amplitude_bias", "bias_report", "parameter_bias", "normalize_weights",
           "format_bias_table"]


@dataclass
class BiasReport:
    method_tag: str
    per_config: np.ndarray
    lines_used: np.ndarray
    lines_excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def value(self) -> float:
        return float(np.mean(self.per_config))


def normalize_weights(W: np.ndarray) -> np.ndarray:
    """Scale per-line weights to unit matrix 2-norm.

    ``(L, n)`` arrays are the diagonals of vec-weights, so the 2-norm is the
    largest entry. ``(L, n_y, n_y)`` arrays are full matrices.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        s = np.max(np.abs(W), axis=1)
    elif W.ndim == 3:
        s = np.linalg.norm(W, ord=2, axis=(1, 2))
    else:
        raise ValueError(f"weights must be (L, n) or (L, n_y, n_y), got {W.shape}")
    s = np.where(s > 0, s, 1.0)
    return W / s.reshape((-1,) + (1,) * (W.ndim - 1))


def _line_bias(D: np.ndarray, W: Optional[np.ndarray]) -> np.ndarray:
    # D = |G| - |G_hat|, (L, n_y, n_u)
    L, n_y, n_u = D.shape
    if W is None:
        return np.linalg.norm(D, ord=2, axis=(1, 2))
    if W.ndim == 2:
        if W.shape != (L, n_y * n_u):
            raise ValueError(f"weights shape {W.shape} does not match ({L}, {n_y * n_u})")
        v = D.transpose(0, 2, 1).reshape(L, -1)
        return np.linalg.norm(W * v, axis=1)
    if W.shape != (L, n_y, n_y):
        raise ValueError(f"weights shape {W.shape} does not match ({L}, {n_y}, {n_y})")
    return np.linalg.norm(np.swapaxes(W, 1, 2) @ D, ord=2, axis=(1, 2))


def _as_list(x):
    return [x] if isinstance(x, FrfEstimate) else list(x)


def bias_report(truth, estimate, weights=None, normalize: bool = True) -> BiasReport:
    """Weighted amplitude bias, averaged over valid lines and configurations.

    ``truth`` and ``estimate`` are FrfEstimates or equal-length sequences of
    them (one per configuration). ``weights`` is ``None`` (identity), one
    array, or one array per configuration.
    """
    truths, ests = _as_list(truth), _as_list(estimate)
    if len(truths) != len(ests):
        raise ValueError("need one estimate per truth configuration")
    if weights is None or isinstance(weights, np.ndarray):
        weights = [weights] * len(truths)
    per, used, excl = [], [], []
    for T, E, W in zip(truths, ests, weights):
        if T.freqs.shape != E.freqs.shape or not np.allclose(T.freqs, E.freqs, rtol=1e-12, atol=0):
            raise ValueError("truth and estimate frequency grids differ")
        if T.G.shape != E.G.shape:
            raise ValueError(f"shape mismatch {T.G.shape} vs {E.G.shape}")
        ok = T.valid & E.valid
        if W is not None:
            W = normalize_weights(W) if normalize else np.asarray(W, dtype=float)
            W = W[ok]
        if not np.any(ok):
            raise ValueError(f"no valid lines for {E.method_tag!r}")
        b = _line_bias(np.abs(T.G[ok]) - np.abs(E.G[ok]), W)
        per.append(float(np.mean(b)))
        used.append(int(ok.sum()))
        excl.append(int((~ok).sum()))
    if any(excl):
        logger.info("%s: %d invalid lines excluded", ests[0].method_tag, sum(excl))
    return BiasReport(ests[0].method_tag, np.array(per), np.array(used), np.array(excl))


def frf_amplitude_bias(truth, estimate, weights=None, normalize: bool = True) -> float:
    return bias_report(truth, estimate, weights, normalize).value


def parameter_bias(theta0, theta_hat, names: Optional[Sequence[str]] = None) -> tuple[float, np.ndarray]:
    """Mean relative absolute parameter deviation and the per-parameter values.

    Accepts ThetaVectors (compared over ``names``, default the linear
    stiffness/damping set) or plain arrays.
    """
    if isinstance(theta0, ThetaVector):
        names = list(names) if names is not None else theta0.names()
        a, b = theta0.to_vector(names), theta_hat.to_vector(names)
    else:
        a, b = np.asarray(theta0, dtype=float), np.asarray(theta_hat, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    zero = a == 0
    if np.all(zero):
        raise ValueError("all reference parameters are zero")
    rel = np.full(a.shape, np.nan)
    rel[~zero] = np.abs(a[~zero] - b[~zero]) / np.abs(a[~zero])
    if np.any(zero):
        warnings.warn(f"{int(zero.sum())} zero reference parameter(s) excluded from the mean", RuntimeWarning,
                      stacklevel=2)
    return float(np.mean(rel[~zero])), rel


def format_bias_table(rows: Sequence[tuple[str, dict]], methods: Sequence[str], fmt: str = "{:.4g}") -> str:
    """Plain-text table, one row per label, one column per method."""
    head = ["n_e"] + list(methods)
    body = [[label] + [fmt.format(vals[m]) if m in vals else "-" for m in methods] for label, vals in rows]
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [head] + body]
    return "\n".join(lines) + "\n"

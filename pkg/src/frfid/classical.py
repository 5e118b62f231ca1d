"""Classical multi-experiment FRF estimators (H1, ARI, LOG, JIO).

Every estimator works line by line; a line where the required matrix is
singular is flagged invalid rather than failing the whole estimate.
Matrix inverses are always applied through linear solves.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .matfun import DEFECTIVE_COND, MatFunError, BranchCutError, DefectiveMatrixError, eig, mat_exp, mat_log
from .sigproc import SpectralRecord

__all__ = [
    "COND_LIMIT",
    "FrfEstimate",
    "ExperimentBlocks",
    "vec",
    "unvec",
    "block_frfs",
    "h1_estimate",
    "ari_estimate",
    "phase_align_matrix",
    "log_average",
    "log_estimate",
    "jio_classical",
]

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
PERTURBATION = 1e-10


def vec(G: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization over the last two axes."""
    G = np.asarray(G)
    return np.swapaxes(G, -1, -2).reshape(G.shape[:-2] + (-1,))


def unvec(v: np.ndarray, n_y: int, n_u: int) -> np.ndarray:
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (n_u, n_y)), -1, -2)


@dataclass
class FrfEstimate:
    """FRF matrix per excited line plus optional uncertainty.

    ``G`` is ``(L, n_y, n_u)``. ``cov`` (if present) is the covariance of
    ``vec(G)`` per line, ``(L, n_y*n_u, n_y*n_u)``, with ``cov_valid``
    marking lines where it is available. ``noise_cov`` holds a residual
    noise covariance ``(L, n_y, n_y)`` for local methods. Invalid lines carry
    ``G = 0`` and ``valid = False``.
    """

    freqs: np.ndarray
    G: np.ndarray
    method_tag: str = ""
    n_e_used: int = 0
    valid: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    cov_valid: Optional[np.ndarray] = None
    noise_cov: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        self.G = np.asarray(self.G, dtype=complex)
        if self.G.ndim != 3 or self.G.shape[0] != self.freqs.size:
            raise ValueError(f"G shape {self.G.shape} does not match {self.freqs.size} lines")
        if self.valid is None:
            self.valid = np.ones(self.freqs.size, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        bad = ~np.all(np.isfinite(self.G), axis=(1, 2))
        if np.any(bad):
            self.G = self.G.copy()
            self.G[bad] = 0.0
            self.valid = self.valid & ~bad
        if self.cov is not None and self.cov_valid is None:
            self.cov_valid = self.valid.copy()

    @property
    def n_lines(self) -> int:
        return self.freqs.size

    @property
    def n_y(self) -> int:
        return self.G.shape[1]

    @property
    def n_u(self) -> int:
        return self.G.shape[2]

    @property
    def freqs_hz(self) -> np.ndarray:
        return self.freqs / (2 * np.pi)

    def with_tag(self, tag: str) -> "FrfEstimate":
        return replace(self, method_tag=tag)


@dataclass(frozen=True)
class ExperimentBlocks:
    """Partition of experiment columns into ``M`` blocks of ``n_u`` each."""

    blocks: tuple

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValueError("need at least one block")

    @classmethod
    def contiguous(cls, n_e: int, n_u: int) -> "ExperimentBlocks":
        if n_e % n_u or n_e == 0:
            raise ValueError(f"n_e = {n_e} is not a positive multiple of n_u = {n_u}")
        return cls(tuple(tuple(range(m * n_u, (m + 1) * n_u)) for m in range(n_e // n_u)))

    @property
    def M(self) -> int:
        return len(self.blocks)

    def check(self, n_u: int, n_e: int) -> None:
        for b in self.blocks:
            if len(b) != n_u:
                raise ValueError(f"block {b} has {len(b)} experiments, need n_u = {n_u}")
            if min(b) < 0 or max(b) >= n_e:
                raise ValueError(f"block {b} indexes outside {n_e} experiments")


def _default_blocks(rec: SpectralRecord, blocks: Optional[ExperimentBlocks]) -> ExperimentBlocks:
    if blocks is None:
        blocks = ExperimentBlocks.contiguous(rec.n_e, rec.n_u)
    blocks.check(rec.n_u, rec.n_e)
    return blocks


def _right_divide(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``num @ inv(den)`` per line with a conditioning check.

    Returns the quotient (zero on rejected lines) and the validity mask.
    """
    cond = np.linalg.cond(den)
    ok = np.isfinite(cond) & (cond <= COND_LIMIT)
    out = np.zeros(num.shape[:-1] + (den.shape[-1],), dtype=complex)
    if np.any(ok):
        sol = np.linalg.solve(np.swapaxes(den[ok], -1, -2), np.swapaxes(num[ok], -1, -2))
        out[ok] = np.swapaxes(sol, -1, -2)
    return out, ok


def h1_estimate(rec: SpectralRecord, blocks: Optional[ExperimentBlocks] = None) -> FrfEstimate:
    """H1 estimate ``[sum Y U^H][sum U U^H]^-1`` per line.

    No windowing: every excited line is solved on its own.
    """
    blocks = _default_blocks(rec, blocks)
    cols = np.concatenate([np.asarray(b) for b in blocks.blocks])
    U = rec.U[:, :, cols]
    Y = rec.Y[:, :, cols]
    M = blocks.M
    Syu = Y @ np.conj(np.swapaxes(U, 1, 2)) / M
    Suu = U @ np.conj(np.swapaxes(U, 1, 2)) / M
    G, ok = _right_divide(Syu, Suu)
    est = FrfEstimate(rec.freqs, G, method_tag=f"H1(M={M})", n_e_used=cols.size, valid=ok)
    if not np.all(ok):
        est.notes.append(f"{np.sum(~ok)} lines with singular input Gramian")
    return est


def block_frfs(rec: SpectralRecord, blocks: Optional[ExperimentBlocks] = None):
    """Per-block ``G[m] = Y[m] U[m]^-1``; returns ``(M, L, n_y, n_u)`` and mask."""
    blocks = _default_blocks(rec, blocks)
    Gs, oks = [], []
    for b in blocks.blocks:
        idx = np.asarray(b)
        G, ok = _right_divide(rec.Y[:, :, idx], rec.U[:, :, idx])
        Gs.append(G)
        oks.append(ok)
    return np.stack(Gs), np.stack(oks)


def ari_estimate(rec: SpectralRecord, blocks: Optional[ExperimentBlocks] = None) -> FrfEstimate:
    """Arithmetic mean of the per-block FRFs, skipping singular blocks per line."""
    Gs, oks = block_frfs(rec, blocks)
    count = oks.sum(axis=0)
    total = np.where(oks[:, :, None, None], Gs, 0.0).sum(axis=0)
    valid = count > 0
    G = np.zeros_like(total)
    G[valid] = total[valid] / count[valid, None, None]
    est = FrfEstimate(rec.freqs, G, method_tag=f"ARI(M={Gs.shape[0]})",
                      n_e_used=rec.n_u * Gs.shape[0], valid=valid)
    excluded = int(np.sum(~oks))
    if excluded:
        est.notes.append(f"{excluded} (block, line) pairs excluded as singular")
    return est


def _perturbed(A: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    scale = PERTURBATION * max(np.linalg.norm(A), 1e-300)
    return A + scale * (rng.standard_normal(A.shape) + 1j * rng.standard_normal(A.shape))


def _eig_with_retry(A: np.ndarray, seed: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = eig(A)
        if d.cond_V <= DEFECTIVE_COND:
            return d, False
        d = eig(_perturbed(A, seed))
    if d.cond_V > DEFECTIVE_COND:
        raise DefectiveMatrixError(f"defective after perturbation retry, cond(V) = {d.cond_V:.3g}")
    return d, True


def phase_align_matrix(G1: np.ndarray, seed: int = 0) -> np.ndarray:
    """``P = V diag(exp(-j arg lambda)) V^-1`` from the eigenvalues of ``G1``.

    All eigenvalues of ``P @ G1`` are real and non-negative. A defective
    ``G1`` is retried once with a 1e-10 relative random perturbation.
    """
    G1 = np.asarray(G1, dtype=complex)
    if G1.shape[0] != G1.shape[1]:
        raise ValueError("phase alignment needs a square FRF (n_u = n_y)")
    d, _ = _eig_with_retry(G1, seed)
    rot = np.exp(-1j * np.angle(d.lambdas))
    return np.linalg.solve(d.V.T, (d.V * rot).T).T


def _log_with_retry(A: np.ndarray, seed: int) -> np.ndarray:
    try:
        return mat_log(A)
    except DefectiveMatrixError:
        return mat_log(_perturbed(A, seed))


def log_average(Gs: np.ndarray, ok: Optional[np.ndarray] = None, freqs=None,
                method_tag: str = "LOG", n_e_used: int = 0) -> FrfEstimate:
    """Logarithmic average of per-block FRFs ``Gs`` of shape ``(M, L, n, n)``.

    ``P`` comes from the first valid block at each line (block 1 unless it
    is unusable there). The uncertainty is
    ``(1/M^2) sum vec(G[m] - G_log) vec(G[m] - G_log)^H``; it is marked
    unavailable at lines with fewer than two usable blocks.
    """
    Gs = np.asarray(Gs, dtype=complex)
    M, L, n_y, n_u = Gs.shape
    if n_y != n_u:
        raise ValueError("logarithmic averaging needs n_u = n_y")
    if ok is None:
        ok = np.ones((M, L), dtype=bool)
    ok = ok & np.all(np.isfinite(Gs), axis=(2, 3))
    if freqs is None:
        freqs = np.arange(1, L + 1, dtype=float)

    G = np.zeros((L, n_y, n_u), dtype=complex)
    valid = np.zeros(L, dtype=bool)
    cov = np.zeros((L, n_y * n_u, n_y * n_u), dtype=complex)
    cov_valid = np.zeros(L, dtype=bool)
    fallback_lines = 0
    dropped = 0
    for l in range(L):
        members = [m for m in range(M) if ok[m, l]]
        if not members:
            continue
        if len(members) == 1:
            G[l] = Gs[members[0], l]
            valid[l] = True
            continue
        P = None
        for m in members:
            try:
                P = phase_align_matrix(Gs[m, l], seed=l)
                fallback_lines += m != 0
                break
            except MatFunError:
                continue
        if P is None:
            continue
        logs = []
        used = []
        for m in members:
            try:
                logs.append(_log_with_retry(P @ Gs[m, l], seed=l * M + m))
                used.append(m)
            except (BranchCutError, DefectiveMatrixError):
                dropped += 1
        if not logs:
            continue
        if len(used) == 1:
            G[l] = Gs[used[0], l]
        else:
            try:
                E = mat_exp(np.mean(logs, axis=0))
            except DefectiveMatrixError:
                E = mat_exp(_perturbed(np.mean(logs, axis=0), seed=l))
            G[l] = np.linalg.solve(P, E)
        valid[l] = True
        if len(used) >= 2:
            D = vec(Gs[used, l] - G[l])
            cov[l] = D.T @ D.conj() / len(used) ** 2
            cov_valid[l] = True

    est = FrfEstimate(freqs, G, method_tag=method_tag, n_e_used=n_e_used, valid=valid,
                      cov=cov, cov_valid=cov_valid)
    if fallback_lines:
        est.method_tag += f";P-fallback@{fallback_lines}"
        est.notes.append(f"P taken from a later block at {fallback_lines} lines")
    if dropped:
        est.notes.append(f"{dropped} (block, line) pairs dropped at the log branch cut")
    return est


def log_estimate(rec: SpectralRecord, blocks: Optional[ExperimentBlocks] = None) -> FrfEstimate:
    """Logarithmic-average estimate over the experiment blocks of ``rec``."""
    blocks = _default_blocks(rec, blocks)
    Gs, oks = block_frfs(rec, blocks)
    return log_average(Gs, oks, rec.freqs, method_tag=f"LOG(M={blocks.M})",
                       n_e_used=rec.n_u * blocks.M)


def jio_classical(rec: SpectralRecord, blocks: Optional[ExperimentBlocks] = None) -> FrfEstimate:
    """Joint input-output estimate ``[sum Y R^H][sum U R^H]^-1``."""
    if rec.R is None:
        raise ValueError("joint input-output estimation needs the reference spectra R")
    blocks = _default_blocks(rec, blocks)
    cols = np.concatenate([np.asarray(b) for b in blocks.blocks])
    U, Y, R = rec.U[:, :, cols], rec.Y[:, :, cols], rec.R[:, :, cols]
    RH = np.conj(np.swapaxes(R, 1, 2))
    G, ok = _right_divide(Y @ RH, U @ RH)
    est = FrfEstimate(rec.freqs, G, method_tag=f"JIO(M={blocks.M})", n_e_used=cols.size, valid=ok)
    if not np.all(ok):
        est.notes.append(f"{np.sum(~ok)} lines with singular U R^H sum")
    return est

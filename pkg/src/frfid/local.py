"""Local polynomial and local rational FRF estimation.

Around every excited line ``k`` the FRF is modelled over a window of ``w``
neighbouring excited lines (offset ``r`` in line-index units) as

* LPM:       ``G(k+r) = G(k) + sum_s g_s r^s``
* LRM MISO:  row ``i`` divided by a scalar ``D_i(r) = 1 + sum_s d_{s,i} r^s``
* LRM MIMO:  ``D(r)^-1 N(r)`` with a full ``n_y x n_y`` matrix polynomial

and the (linear-in-parameters, Levy) least-squares problem is solved per
window. Windows slide over the excited-line index, not the DFT-bin index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .classical import FrfEstimate, log_average
from .sigproc import SpectralRecord

__all__ = [
    "LocalFitConfig",
    "LocalWindow",
    "LocalTheta",
    "w_min",
    "build_windows",
    "local_fit",
    "lpm_fit",
    "lrm_miso_fit",
    "lrm_mimo_fit",
    "jio_lrm",
    "log_average_local",
    "local_estimate",
]

PARAMETRIZATIONS = ("LPM", "LRM_MISO", "LRM_MIMO")
DEN_FLOOR = 1e-8
JIO_COND_LIMIT = 1e10


def w_min(parametrization: str, order: int, n_in: int, n_out: int) -> int:
    """Smallest window width that leaves the local problem determined."""
    base = (order + 1) * n_in
    if parametrization == "LPM":
        return base
    if parametrization == "LRM_MISO":
        return base + order
    if parametrization == "LRM_MIMO":
        return base + order * n_out
    raise ValueError(f"unknown parametrization {parametrization!r}")


@dataclass(frozen=True)
class LocalFitConfig:
    """Settings of a local fit.

    ``half_width=None`` picks ``b = ceil((w_min + 2) / 2)``, i.e. a window a
    little wider than the minimum.
    """

    order: int = 2
    half_width: Optional[int] = None
    parametrization: str = "LRM_MIMO"
    offset_scaling: str = "normalized"
    rank_tol: float = 1e-10

    def __post_init__(self):
        if self.parametrization not in PARAMETRIZATIONS:
            raise ValueError(f"unknown parametrization {self.parametrization!r}")
        if self.offset_scaling not in ("normalized", "raw"):
            raise ValueError(f"unknown offset_scaling {self.offset_scaling!r}")
        if self.order < 0:
            raise ValueError("order must be >= 0")

    def width(self, n_in: int, n_out: int) -> int:
        wm = w_min(self.parametrization, self.order, n_in, n_out)
        b = self.half_width if self.half_width is not None else math.ceil((wm + 2) / 2)
        w = 2 * b
        if w < wm:
            raise ValueError(f"window width {w} below minimum {wm} for {self.parametrization}, "
                             f"R={self.order}, n_in={n_in}, n_out={n_out}")
        return w


@dataclass(frozen=True)
class LocalWindow:
    center_index: int
    offsets: np.ndarray
    line_indices: np.ndarray


def _window_starts(n_lines: int, w: int) -> np.ndarray:
    if w < 1:
        raise ValueError("window width must be positive")
    if n_lines < w:
        raise ValueError(f"{n_lines} excited lines cannot hold a window of width {w}")
    b = w // 2
    k = np.arange(n_lines)
    return np.clip(k - b, 0, n_lines - w)


def build_windows(n_lines: int, w: int) -> list[LocalWindow]:
    """One window of ``w`` lines per excited line.

    Interior windows use offsets ``[-b, b-1]`` (``b = w // 2``); near the
    borders the window is shifted so it stays inside the grid and still
    contains its centre.
    """
    starts = _window_starts(n_lines, w)
    out = []
    for k, s in enumerate(starts):
        lines = np.arange(s, s + w)
        out.append(LocalWindow(center_index=k, offsets=lines - k, line_indices=lines))
    return out


def _window_arrays(n_lines: int, w: int):
    starts = _window_starts(n_lines, w)
    idx = starts[:, None] + np.arange(w)[None, :]
    return idx, idx - np.arange(n_lines)[:, None]


@dataclass
class LocalTheta:
    """Per-line local parameters on the raw integer-offset scale.

    ``theta[l]`` has shape ``(p, n_out)`` (column per output row). For LRM
    MISO the denominator coefficients of row ``i`` sit in the last ``R``
    entries of column ``i``.
    """

    theta: np.ndarray
    noise_cov: np.ndarray
    q: np.ndarray
    rank: np.ndarray
    n_params: int


def _powers(rho: np.ndarray, order: int) -> np.ndarray:
    return rho[..., None] ** np.arange(order + 1)


def _lstsq(K: np.ndarray, Z: np.ndarray, rank_tol: float):
    """Batched least squares ``K theta = Z`` via SVD of the column-scaled ``K``.

    Returns ``theta``, the numerical rank and the pseudo-inverse.
    """
    scale = np.linalg.norm(K, axis=-2)
    scale = np.where(scale > 0, scale, 1.0)
    Ks = K / scale[..., None, :]
    Uv, s, Vh = np.linalg.svd(Ks, full_matrices=False)
    keep = s > rank_tol * s[..., :1]
    inv_s = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    pinv = np.conj(np.swapaxes(Vh, -1, -2)) * inv_s[..., None, :] @ np.conj(np.swapaxes(Uv, -1, -2))
    pinv = pinv / scale[..., :, None]
    theta = pinv @ Z
    return theta, keep.sum(axis=-1), pinv


def _zero_order_cov(Pa, Pb, resid_a, resid_b, q):
    """``cov(vec G_a, vec G_b)`` of two local fits sharing their windows.

    ``P*`` are the zero-order pseudo-inverse rows ``(L, n_out, n_in, w)``;
    the window residuals give the (cross) noise covariance.
    cov(G_ij, G'_i'j') = sigma_{ii'} [P_i P'_i'^H]_{j(R+1), j'(R+1)}
    """
    qpos = np.where(q > 0, q, 1)
    sigma = np.einsum("lwi,lwk->lik", resid_a, np.conj(resid_b)) / qpos[:, None, None]
    cross = np.einsum("laxw,lbyw->labxy", Pa, np.conj(Pb))  # (L, i, i', j, j')
    cg = sigma[:, :, :, None, None] * cross
    L, n_a, n_in = Pa.shape[:3]
    n_b, n_in_b = Pb.shape[1:3]
    # vec index j*n_out + i
    return cg.transpose(0, 3, 1, 4, 2).reshape(L, n_in * n_a, n_in_b * n_b)


def local_fit(X: np.ndarray, Z: np.ndarray, config: LocalFitConfig, freqs=None,
              return_theta: bool = False):
    """Local fit of outputs ``Z (L, n_out)`` on inputs ``X (L, n_in)``.

    Returns an :class:`FrfEstimate` (and the :class:`LocalTheta` if asked).
    """
    est, theta, _, _ = _local_fit(X, Z, config, freqs)
    return (est, theta) if return_theta else est


def _local_fit(X, Z, config: LocalFitConfig, freqs=None):
    X = np.asarray(X, dtype=complex)
    Z = np.asarray(Z, dtype=complex)
    L, n_in = X.shape
    n_out = Z.shape[1]
    R = config.order
    kind = config.parametrization
    w = config.width(n_in, n_out)
    idx, off = _window_arrays(L, w)
    if config.offset_scaling == "normalized":
        sc = np.abs(off).max(axis=1).astype(float)
        sc[sc == 0] = 1.0
    else:
        sc = np.ones(L)
    rho = off / sc[:, None]
    pw = _powers(rho, R)                                   # (L, w, R+1)
    Xw = X[idx]                                            # (L, w, n_in)
    Zw = Z[idx]                                            # (L, w, n_out)
    Knum = (Xw[:, :, :, None] * pw[:, :, None, :]).reshape(L, w, n_in * (R + 1))
    p_num = n_in * (R + 1)

    if kind == "LPM":
        theta, rank, pinv = _lstsq(Knum, Zw, config.rank_tol)
        resid = Zw - Knum @ theta
        p = p_num
        rank_rows = np.repeat(rank[:, None], n_out, axis=1)
        pinv_rows = np.repeat(pinv[:, None], n_out, axis=1)
    elif kind == "LRM_MISO":
        den = -(Zw[:, :, :, None] * pw[:, :, None, 1:])   # (L, w, n_out, R)
        K = np.concatenate(
            [np.broadcast_to(Knum[:, None], (L, n_out, w, p_num)), np.moveaxis(den, 2, 1)], axis=-1)
        Zr = np.moveaxis(Zw, 2, 1)[..., None]              # (L, n_out, w, 1)
        th, rank_rows, pinv_rows = _lstsq(K, Zr, config.rank_tol)
        theta = np.moveaxis(th[..., 0], 1, 2)              # (L, p, n_out)
        resid = np.moveaxis((Zr - K @ th)[..., 0], 1, 2)
        p = p_num + R
        rank = rank_rows.min(axis=1)
    else:
        den = -(Zw[:, :, :, None] * pw[:, :, None, 1:]).reshape(L, w, n_out * R)
        K = np.concatenate([Knum, den], axis=-1)
        theta, rank, pinv = _lstsq(K, Zw, config.rank_tol)
        resid = Zw - K @ theta
        p = p_num + R * n_out
        rank_rows = np.repeat(rank[:, None], n_out, axis=1)
        pinv_rows = np.repeat(pinv[:, None], n_out, axis=1)

    # map normalized-offset coefficients back to integer offsets
    sp = np.ones((L, p))
    sp[:, :p_num] = np.tile(sc[:, None] ** -np.arange(R + 1.0), (1, n_in))
    if kind != "LPM" and R > 0:
        sp[:, p_num:] = np.tile(sc[:, None] ** -np.arange(1.0, R + 1), (1, (p - p_num) // R))
    theta_raw = theta * sp[:, :, None]

    G = np.swapaxes(theta[:, 0:p_num:R + 1, :], 1, 2)      # (L, n_out, n_in)
    full_rank = rank >= p
    valid = full_rank.copy()
    notes = []
    if np.any(~full_rank):
        notes.append(f"{np.sum(~full_rank)} lines rank deficient (rank < {p}); widen the window")

    if kind != "LPM" and R > 0:
        d = theta[:, p_num:, :]                            # (L, R*?, n_out)
        rp = rho[:, :, None] ** np.arange(1, R + 1)        # (L, w, R)
        if kind == "LRM_MISO":
            Dval = 1.0 + np.einsum("lws,lsi->lwi", rp, d)  # (L, w, n_out)
            unstable = np.any(np.abs(Dval) < DEN_FLOOR, axis=(1, 2))
        else:
            dm = d.reshape(L, n_out, R, n_out)            # [l, col(output l'), s, row i]
            Dmat = np.eye(n_out) + np.einsum("lws,lksi->lwik", rp, dm)
            smin = np.linalg.svd(Dmat, compute_uv=False)[..., -1]
            unstable = np.any(smin < DEN_FLOOR, axis=1)
        if np.any(unstable & valid):
            notes.append(f"{np.sum(unstable & valid)} lines with vanishing local denominator")
        valid &= ~unstable

    q = w - rank
    qpos = np.where(q > 0, q, 1)
    noise_cov = np.conj(np.swapaxes(resid, 1, 2)) @ resid / qpos[:, None, None]
    cov_valid = valid & (q > 0)
    Pz = pinv_rows[:, :, np.arange(0, p_num, R + 1), :]   # (L, n_out, n_in, w)
    cov = _zero_order_cov(Pz, Pz, resid, resid, q)

    freqs = np.arange(1, L + 1, dtype=float) if freqs is None else freqs
    est = FrfEstimate(freqs, G, method_tag=kind, n_e_used=1, valid=valid, cov=cov,
                      cov_valid=cov_valid, noise_cov=noise_cov, notes=notes)
    return est, LocalTheta(theta=theta_raw, noise_cov=noise_cov, q=q, rank=rank, n_params=p), Pz, resid


def _single(rec: SpectralRecord, experiment: Optional[int]):
    if experiment is None:
        if rec.n_e != 1:
            raise ValueError(f"record holds {rec.n_e} experiments; pass experiment= or use local_estimate")
        experiment = 0
    return rec.U[:, :, experiment], rec.Y[:, :, experiment], (
        None if rec.R is None else rec.R[:, :, experiment])


def _with_kind(config: LocalFitConfig, kind: str) -> LocalFitConfig:
    if config.parametrization == kind:
        return config
    return LocalFitConfig(order=config.order, half_width=config.half_width, parametrization=kind,
                          offset_scaling=config.offset_scaling, rank_tol=config.rank_tol)


def lpm_fit(rec: SpectralRecord, config: LocalFitConfig = LocalFitConfig(parametrization="LPM"),
            experiment: Optional[int] = None, return_theta: bool = False):
    """Local polynomial estimate from one experiment."""
    U, Y, _ = _single(rec, experiment)
    return local_fit(U, Y, _with_kind(config, "LPM"), rec.freqs, return_theta)


def lrm_miso_fit(rec: SpectralRecord, config: LocalFitConfig = LocalFitConfig(parametrization="LRM_MISO"),
                 experiment: Optional[int] = None, return_theta: bool = False):
    """Local rational estimate with one scalar denominator per output row."""
    U, Y, _ = _single(rec, experiment)
    return local_fit(U, Y, _with_kind(config, "LRM_MISO"), rec.freqs, return_theta)


def lrm_mimo_fit(rec: SpectralRecord, config: LocalFitConfig = LocalFitConfig(parametrization="LRM_MIMO"),
                 experiment: Optional[int] = None, return_theta: bool = False):
    """Local rational estimate with a full matrix-fraction denominator."""
    U, Y, _ = _single(rec, experiment)
    return local_fit(U, Y, _with_kind(config, "LRM_MIMO"), rec.freqs, return_theta)


def _herm(A):
    return np.conj(np.swapaxes(A, -1, -2))


def jio_lrm(rec: SpectralRecord, config: LocalFitConfig = LocalFitConfig(parametrization="LRM_MIMO"),
            experiment: Optional[int] = None) -> FrfEstimate:
    """Joint input-output local rational estimate ``G_ry G_ru^-1``.

    Both reference-to-output and reference-to-input FRFs are fitted with the
    configured parametrization (full MFD by default) on the same windows;
    for MIMO the scalar ratio becomes a right division.
    """
    U, Y, Rr = _single(rec, experiment)
    if Rr is None:
        raise ValueError("JIO-LRM needs the reference spectra R")
    if Rr.shape[1] != U.shape[1]:
        raise ValueError("JIO-LRM needs one reference per plant input (n_r = n_u)")
    ry, thy, Py, res_y = _local_fit(Rr, Y, config, rec.freqs)
    ru, thu, Pu, res_u = _local_fit(Rr, U, config, rec.freqs)
    cond = np.linalg.cond(ru.G)
    ok = ry.valid & ru.valid & np.isfinite(cond) & (cond <= JIO_COND_LIMIT)
    L, n_y, n_u = rec.n_lines, rec.n_y, rec.n_u
    G = np.zeros((L, n_y, n_u), dtype=complex)
    cov = np.zeros((L, n_y * n_u, n_y * n_u), dtype=complex)
    if np.any(ok):
        Gi = np.linalg.inv(ru.G[ok])
        G[ok] = ry.G[ok] @ Gi
        # first order: dG = (dG_ry - G dG_ru) G_ru^-1, both fits share windows and noise
        Ty = np.einsum("lji,ab->liajb", Gi, np.eye(n_y)).reshape(-1, n_u * n_y, n_u * n_y)
        Tu = -Ty @ np.einsum("ij,lab->liajb", np.eye(n_u), G[ok]).reshape(-1, n_u * n_y, n_u * n_u)
        q = np.minimum(thy.q, thu.q)[ok]
        Cyu = _zero_order_cov(Py[ok], Pu[ok], res_y[ok], res_u[ok], q)
        cross = Ty @ Cyu @ _herm(Tu)
        cov[ok] = Ty @ ry.cov[ok] @ _herm(Ty) + Tu @ ru.cov[ok] @ _herm(Tu) + cross + _herm(cross)
    est = FrfEstimate(rec.freqs, G, method_tag=f"JIO_LRM[{config.parametrization};right-division]",
                      n_e_used=1, valid=ok, cov=cov, cov_valid=ok & ry.cov_valid & ru.cov_valid,
                      notes=ry.notes + ru.notes)
    bad = int(np.sum(ry.valid & ru.valid & ~ok))
    if bad:
        est.notes.append(f"{bad} lines with ill-conditioned G_ru")
    return est


def log_average_local(estimates: Sequence[FrfEstimate]) -> FrfEstimate:
    """Merge per-experiment local estimates by logarithmic averaging."""
    if not estimates:
        raise ValueError("no estimates to average")
    if len(estimates) == 1:
        return estimates[0]
    f0 = estimates[0].freqs
    for e in estimates[1:]:
        if e.freqs.shape != f0.shape or not np.allclose(e.freqs, f0, rtol=1e-12):
            raise ValueError("estimates do not share a frequency grid")
    Gs = np.stack([e.G for e in estimates])
    ok = np.stack([e.valid for e in estimates])
    tag = estimates[0].method_tag.split("(")[0]
    return log_average(Gs, ok, f0, method_tag=f"{tag}+LOG(n_e={len(estimates)})",
                       n_e_used=sum(e.n_e_used for e in estimates))


_FITTERS = {
    "LPM": lambda rec, cfg, m: lpm_fit(rec, cfg, m),
    "LRM_MISO": lambda rec, cfg, m: lrm_miso_fit(rec, cfg, m),
    "LRM_MIMO": lambda rec, cfg, m: lrm_mimo_fit(rec, cfg, m),
    "JIO_LRM": lambda rec, cfg, m: jio_lrm(rec, cfg, m),
}


def local_estimate(rec: SpectralRecord, method: str, config: Optional[LocalFitConfig] = None,
                   experiments: Optional[Sequence[int]] = None) -> FrfEstimate:
    """Run a local method on each experiment and log-average when ``n_e > 1``.

    ``method`` is one of ``LPM``, ``LRM_MISO``, ``LRM_MIMO``, ``JIO_LRM``.
    For JIO_LRM the parametrization in ``config`` selects the inner fit.
    """
    if method not in _FITTERS:
        raise ValueError(f"unknown local method {method!r}")
    if config is None:
        config = LocalFitConfig(parametrization="LRM_MIMO" if method == "JIO_LRM" else method)
    elif method != "JIO_LRM":
        config = _with_kind(config, method)
    if experiments is None:
        experiments = range(rec.n_e)
    ests = [_FITTERS[method](rec, config, m) for m in experiments]
    return log_average_local(ests)

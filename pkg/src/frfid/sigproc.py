"""Multisine excitation design and DFT extraction at excited lines.

DFT convention used throughout the package::

    X(k) = (1/N) * sum_n x[n] exp(-2j*pi*k*n/N)

so a unit-amplitude cosine on bin ``k`` gives ``|X(k)| = 1/2`` and the sum of
``|X(k)|**2`` over all N bins equals the mean square of one period.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "MultisineSpec",
    "Multisine",
    "TimeRecord",
    "SpectralRecord",
    "excited_bins",
    "design_multisine",
    "to_spectral",
    "period_dft",
    "stack_spectral",
]


@dataclass(frozen=True)
class MultisineSpec:
    """Parameters of a (possibly orthogonal) random-phase multisine.

    ``amplitude`` is either a scalar (line-uniform) or one value per excited
    line. ``lines`` overrides the log-spaced odd selection with explicit bin
    indices. ``offset_sine`` is ``(frequency_hz, amplitude)`` or None.
    """

    sample_rate: float
    period_samples: int
    f_min: float
    f_max: float
    n_lines: int
    n_inputs: int = 1
    amplitude: float | Sequence[float] = 1.0
    phase_seed: int = 0
    orthogonal_blocks: bool = True
    lines: Optional[Sequence[int]] = None
    offset_sine: Optional[tuple[float, float]] = None
    input_phases: str = "independent"

    @property
    def ts(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def df(self) -> float:
        return self.sample_rate / self.period_samples


def excited_bins(spec: MultisineSpec) -> np.ndarray:
    """Excited DFT bin indices, ascending and unique.

    Log-spaced target frequencies between ``f_min`` and ``f_max`` are rounded
    to the nearest odd bin; duplicates produced by rounding are dropped.
    """
    if spec.n_lines <= 0:
        raise ValueError("n_lines must be positive")
    N = spec.period_samples
    k_lo = spec.f_min / spec.df
    k_hi = spec.f_max / spec.df
    if spec.lines is not None:
        bins = np.asarray(sorted(set(int(k) for k in spec.lines)), dtype=int)
    else:
        if spec.f_min <= 0 or spec.f_max <= spec.f_min:
            raise ValueError("need 0 < f_min < f_max for log spacing")
        targets = np.geomspace(k_lo, k_hi, spec.n_lines)
        bins = 2 * np.round((targets - 1.0) / 2.0).astype(int) + 1
        # rounding may step just outside the band
        lo_odd = int(np.ceil(k_lo - 1e-9))
        lo_odd += 1 - lo_odd % 2
        hi_odd = int(np.floor(k_hi + 1e-9))
        hi_odd -= 1 - hi_odd % 2
        bins = np.unique(np.clip(bins, lo_odd, hi_odd))
    if bins.size == 0:
        raise ValueError("no excited lines in the requested band")
    if bins[0] < 1 or bins[-1] >= N / 2:
        raise ValueError("excited bins must satisfy 1 <= k < N/2")
    f = bins * spec.df
    if np.any(f < spec.f_min - 1e-9 * spec.df) or np.any(f > spec.f_max + 1e-9 * spec.df):
        raise ValueError("excited bins outside [f_min, f_max]")
    return bins


def _offset_bin(spec: MultisineSpec, bins: np.ndarray) -> Optional[int]:
    if spec.offset_sine is None:
        return None
    f_off, _ = spec.offset_sine
    k = f_off / spec.df
    k_int = int(round(k))
    if abs(k - k_int) > 1e-9 or k_int < 1:
        raise ValueError(f"offset sine {f_off} Hz is not on the DFT grid (df={spec.df} Hz)")
    if f_off >= spec.f_min:
        raise ValueError("offset sine must lie below f_min")
    if k_int in set(bins.tolist()):
        raise ValueError("offset sine collides with an excited line")
    return k_int


@dataclass(frozen=True)
class Multisine:
    """One period of every excitation signal of a campaign.

    ``phasors[m, j, l]`` is the designed DFT value of input ``j`` in
    experiment ``m`` at excited line ``l`` (package DFT convention).
    ``signals`` has shape ``(n_e, n_u, N)``.
    """

    spec: MultisineSpec
    bins: np.ndarray
    phasors: np.ndarray
    signals: np.ndarray
    offset_bin: Optional[int] = None

    @property
    def freqs(self) -> np.ndarray:
        """Excited angular frequencies (rad/s)."""
        return 2 * np.pi * self.bins * self.spec.df

    @property
    def n_experiments(self) -> int:
        return self.signals.shape[0]


def design_multisine(spec: MultisineSpec, n_experiments: int | None = None) -> Multisine:
    """Synthesize ``n_experiments`` periods of an ``n_inputs``-channel multisine.

    With ``orthogonal_blocks`` the experiments are grouped in blocks of
    ``n_inputs``; experiment ``m`` of a block drives input ``j`` with the
    block's random-phase base multiplied by ``exp(2j*pi*j*m/n_u)``. Each block
    draws a fresh phase realization. ``input_phases="independent"`` gives each
    input its own base phases (needed for single-experiment local methods),
    ``"common"`` shares one base across inputs.
    """
    n_u = spec.n_inputs
    if n_experiments is None:
        n_experiments = n_u
    if n_experiments < 1:
        raise ValueError("need at least one experiment")
    if spec.orthogonal_blocks and n_experiments % n_u:
        raise ValueError("n_experiments must be a multiple of n_inputs for orthogonal blocks")
    if spec.input_phases not in ("independent", "common"):
        raise ValueError(f"unknown input_phases {spec.input_phases!r}")

    bins = excited_bins(spec)
    k_off = _offset_bin(spec, bins)
    L = bins.size
    amp = np.broadcast_to(np.asarray(spec.amplitude, dtype=float), (L,)).copy()
    if np.any(amp < 0):
        raise ValueError("amplitudes must be non-negative")

    rng = np.random.default_rng(spec.phase_seed)
    n_ph = n_u if spec.input_phases == "independent" else 1

    phasors = np.empty((n_experiments, n_u, L), dtype=complex)
    if spec.orthogonal_blocks:
        idx = np.arange(n_u)
        T = np.exp(2j * np.pi * np.outer(idx, idx) / n_u)  # T[j, m]
        for b in range(n_experiments // n_u):
            phi = rng.uniform(0.0, 2 * np.pi, size=(n_ph, L))
            base = 0.5 * amp * np.exp(1j * phi)  # (n_ph, L)
            base = np.broadcast_to(base, (n_u, L))
            for m in range(n_u):
                phasors[b * n_u + m] = base * T[:, m][:, None]
    else:
        for m in range(n_experiments):
            phi = rng.uniform(0.0, 2 * np.pi, size=(n_ph, L))
            phasors[m] = np.broadcast_to(0.5 * amp * np.exp(1j * phi), (n_u, L))

    N = spec.period_samples
    spectrum = np.zeros((n_experiments, n_u, N // 2 + 1), dtype=complex)
    spectrum[..., bins] = phasors * N
    if k_off is not None:
        spectrum[..., k_off] = 0.5 * spec.offset_sine[1] * N
    signals = np.fft.irfft(spectrum, n=N, axis=-1)
    return Multisine(spec=spec, bins=bins, phasors=phasors, signals=signals, offset_bin=k_off)


def integrate_periodic(x: np.ndarray, sample_rate: float) -> np.ndarray:
    """Zero-mean periodic antiderivative of a zero-mean periodic signal.

    Division by ``j*omega`` in the DFT domain, exact for multisines.
    """
    N = x.shape[-1]
    X = np.fft.rfft(x, axis=-1)
    w = 2 * np.pi * np.arange(X.shape[-1]) * sample_rate / N
    w[0] = 1.0
    X = X / (1j * w)
    X[..., 0] = 0.0
    if N % 2 == 0:
        X[..., -1] = 0.0
    return np.fft.irfft(X, n=N, axis=-1)


@dataclass
class TimeRecord:
    """Sampled closed-loop signals of one experiment.

    ``u``, ``y``, ``r`` are ``(channels, T)`` arrays on one time base with
    ``T = (n_periods + settle_periods) * period_samples``.
    """

    u: np.ndarray
    y: np.ndarray
    r: Optional[np.ndarray]
    sample_rate: float
    period_samples: int
    n_periods: int
    settle_periods: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.r is not None:
            self.r = np.atleast_2d(np.asarray(self.r, dtype=float))
        T = (self.n_periods + self.settle_periods) * self.period_samples
        for name, arr in (("u", self.u), ("y", self.y), ("r", self.r)):
            if arr is not None and arr.shape[1] != T:
                raise ValueError(f"{name} has {arr.shape[1]} samples, expected {T}")

    @property
    def n_samples(self) -> int:
        return self.u.shape[1]

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def period_dft(x: np.ndarray, period_samples: int, settle_periods: int = 0) -> np.ndarray:
    """Full-bin DFT averaged over the steady-state periods of ``x``.

    ``x`` is ``(channels, T)``; returns ``(channels, N//2 + 1)``.
    """
    x = np.atleast_2d(x)
    N = period_samples
    T = x.shape[-1]
    if T % N:
        raise ValueError(f"record length {T} is not an integer number of periods of {N}")
    P = T // N - settle_periods
    if P < 1:
        raise ValueError("no steady-state periods left after settling")
    seg = x[:, settle_periods * N:].reshape(x.shape[0], P, N)
    return np.fft.rfft(seg, axis=-1).mean(axis=1) / N


@dataclass
class SpectralRecord:
    """DFT values at excited lines for ``n_e`` experiments.

    ``U`` is ``(L, n_u, n_e)``, ``Y`` is ``(L, n_y, n_e)``, ``R`` is
    ``(L, n_r, n_e)`` or None. ``freqs`` are angular frequencies (rad/s).
    """

    freqs: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    R: Optional[np.ndarray] = None

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=float)
        if self.U.ndim == 2:
            self.U = self.U[:, :, None]
        if self.Y.ndim == 2:
            self.Y = self.Y[:, :, None]
        if self.R is not None and self.R.ndim == 2:
            self.R = self.R[:, :, None]
        L = self.freqs.size
        if np.any(np.diff(self.freqs) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        for name, arr in (("U", self.U), ("Y", self.Y), ("R", self.R)):
            if arr is None:
                continue
            if arr.shape[0] != L or arr.shape[2] != self.U.shape[2]:
                raise ValueError(f"{name} shape {arr.shape} inconsistent with {L} lines "
                                 f"and {self.U.shape[2]} experiments")

    @property
    def n_lines(self) -> int:
        return self.freqs.size

    @property
    def n_u(self) -> int:
        return self.U.shape[1]

    @property
    def n_y(self) -> int:
        return self.Y.shape[1]

    @property
    def n_e(self) -> int:
        return self.U.shape[2]

    def select(self, experiments) -> "SpectralRecord":
        """Record restricted to the given experiment indices."""
        idx = np.atleast_1d(np.asarray(experiments, dtype=int))
        R = None if self.R is None else self.R[:, :, idx]
        return SpectralRecord(self.freqs, self.U[:, :, idx], self.Y[:, :, idx], R)


def to_spectral(record: TimeRecord, bins: np.ndarray) -> SpectralRecord:
    """DFT of one experiment at the excited ``bins``.

    Leading settle periods are discarded and the DFT is averaged over the
    remaining periods. Accepts a :class:`MultisineSpec` or :class:`Multisine`
    in place of ``bins``.
    """
    if isinstance(bins, Multisine):
        bins = bins.bins
    elif isinstance(bins, MultisineSpec):
        bins = excited_bins(bins)
    bins = np.asarray(bins, dtype=int)
    N = record.period_samples
    Xu = period_dft(record.u, N, record.settle_periods)[:, bins]
    Xy = period_dft(record.y, N, record.settle_periods)[:, bins]
    Xr = None
    if record.r is not None:
        Xr = period_dft(record.r, N, record.settle_periods)[:, bins].T
    freqs = 2 * np.pi * bins * record.sample_rate / N
    return SpectralRecord(freqs, Xu.T, Xy.T, Xr)


def stack_spectral(records: Sequence[SpectralRecord]) -> SpectralRecord:
    """Concatenate single- or multi-experiment records along experiments."""
    if not records:
        raise ValueError("nothing to stack")
    f0 = records[0].freqs
    for rec in records[1:]:
        if rec.freqs.shape != f0.shape or not np.allclose(rec.freqs, f0, rtol=1e-12):
            raise ValueError("records do not share a frequency grid")
    has_r = all(rec.R is not None for rec in records)
    U = np.concatenate([rec.U for rec in records], axis=2)
    Y = np.concatenate([rec.Y for rec in records], axis=2)
    R = np.concatenate([rec.R for rec in records], axis=2) if has_r else None
    return SpectralRecord(f0, U, Y, R)

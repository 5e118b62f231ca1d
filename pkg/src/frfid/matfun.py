"""Matrix functions of general complex matrices via eigendecomposition.

``f(A) = V diag(f(lambda)) V^-1``. Only diagonalizable matrices are
supported; near-defective input raises instead of being regularized.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigDecomposition",
    "MatFunError",
    "BranchCutError",
    "DefectiveMatrixError",
    "eig",
    "mat_log",
    "mat_exp",
    "matfun",
    "DEFECTIVE_COND",
]

DEFECTIVE_COND = 1e12


class MatFunError(ArithmeticError):
    pass


class BranchCutError(MatFunError):
    """An eigenvalue lies on (or numerically at) the principal-log branch cut."""


class DefectiveMatrixError(MatFunError):
    """Eigenvector matrix too ill-conditioned for a reliable decomposition."""


@dataclass(frozen=True)
class EigDecomposition:
    V: np.ndarray
    lambdas: np.ndarray
    cond_V: float

    def reconstruct(self) -> np.ndarray:
        return np.linalg.solve(self.V.T, (self.V * self.lambdas).T).T


def _check_square(A) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def eig(A) -> EigDecomposition:
    """Eigendecomposition ``A V = V diag(lambdas)`` with unit-norm columns.

    Raises :class:`MatFunError` if the QR iteration fails to converge and
    warns when ``cond(V)`` exceeds ``DEFECTIVE_COND``.
    """
    A = _check_square(A)
    try:
        lam, V = np.linalg.eig(A)
    except np.linalg.LinAlgError as exc:
        raise MatFunError(f"eigenvalue iteration did not converge for {A.shape} matrix: {exc}") from exc
    V = V / np.linalg.norm(V, axis=0)
    cond = float(np.linalg.cond(V)) if A.shape[0] > 1 else 1.0
    if not np.isfinite(cond) or cond > DEFECTIVE_COND:
        warnings.warn(f"matrix is (nearly) defective: cond(V) = {cond:.3g}", RuntimeWarning, stacklevel=2)
    return EigDecomposition(V=V, lambdas=lam, cond_V=cond)


def matfun(A, f, decomposition: EigDecomposition | None = None) -> np.ndarray:
    """Apply the scalar function ``f`` to ``A`` through its eigenvalues."""
    A = _check_square(A)
    if A.shape[0] == 1:
        return np.asarray(f(A[0, 0]), dtype=complex).reshape(1, 1)
    d = decomposition if decomposition is not None else _eig_quiet(A)
    if not np.isfinite(d.cond_V) or d.cond_V > DEFECTIVE_COND:
        raise DefectiveMatrixError(
            f"cond(V) = {d.cond_V:.3g}; matrix is not safely diagonalizable, "
            "perturb it slightly and retry")
    fl = f(d.lambdas)
    # V diag(f) V^-1 without forming the inverse
    return np.linalg.solve(d.V.T, (d.V * fl).T).T


def _eig_quiet(A) -> EigDecomposition:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return eig(A)


def _principal_log(lam):
    lam = np.asarray(lam, dtype=complex)
    mag = np.abs(lam)
    if np.any(mag < 1e-300):
        raise BranchCutError("zero eigenvalue: logarithm undefined")
    ang = np.angle(lam)
    near_cut = np.abs(np.abs(ang) - np.pi) < 1e-12
    if np.any(near_cut):
        raise BranchCutError(f"eigenvalue on the negative real axis: {lam[near_cut]}")
    return np.log(mag) + 1j * ang


def mat_log(A, decomposition: EigDecomposition | None = None) -> np.ndarray:
    """Principal matrix logarithm; eigenvalue imaginary parts in (-pi, pi)."""
    return matfun(A, _principal_log, decomposition)


def mat_exp(A, decomposition: EigDecomposition | None = None) -> np.ndarray:
    """Matrix exponential through the eigendecomposition."""
    return matfun(A, np.exp, decomposition)

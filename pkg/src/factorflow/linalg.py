"""Dense symmetric linear algebra kernels.

All matrices are plain float64 ``numpy`` arrays. A "SymMat" is an n x n
array that is exactly symmetric; producers route through :func:`sym_part`
so the invariant holds bit-for-bit.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tolerances import TOL


class EigenDecomp(NamedTuple):
    """Eigendecomposition with eigenvalues sorted descending."""

    eigvals: np.ndarray  # (n,)
    eigvecs: np.ndarray  # (n, n), orthonormal columns


def sym_part(M: np.ndarray) -> np.ndarray:
    """Symmetric part (M + M^T) / 2."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def sym_mat(entries) -> np.ndarray:
    """Construct a symmetric matrix: validate finiteness, then symmetrize."""
    M = np.asarray(entries, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.shape[0] < 1:
        raise ValueError("matrix dimension must be >= 1")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return sym_part(M)


def fro(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, "fro"))


def eigh_sym(M: np.ndarray) -> EigenDecomp:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Rejects non-finite input. Reconstruction and orthonormality are
    accurate to TOL.eig_reconstruction relative to ||M||_F.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("eigh_sym: non-finite entries in input")
    w, V = np.linalg.eigh(sym_part(M))
    return EigenDecomp(eigvals=w[::-1].copy(), eigvecs=V[:, ::-1].copy())


def expm_sym(M: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix via its eigenbasis.

    Result is symmetric positive definite. Raises OverflowError when an
    eigenvalue is large enough that exp() would overflow.
    """
    w, V = eigh_sym(M)
    if w[0] > TOL.expm_overflow:
        raise OverflowError(
            f"expm_sym: eigenvalue {w[0]:.6g} exceeds exp() range"
        )
    return sym_part((V * np.exp(w)) @ V.T)


def psd_project(M: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: clamp negative eigenvalues at zero."""
    w, V = eigh_sym(M)
    if w[-1] >= 0.0:
        return sym_part(M)
    wc = np.maximum(w, 0.0)
    return sym_part((V * wc) @ V.T)


def singular_values(M: np.ndarray) -> np.ndarray:
    """Singular values of a rectangular matrix, descending.

    Computed from the eigenvalues of M^T M (adequate at desk scale).
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("singular_values: non-finite entries in input")
    if M.ndim != 2:
        raise ValueError("singular_values: expected a 2-d array")
    gram = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    w, _ = eigh_sym(gram)
    return np.sqrt(np.maximum(w, 0.0))


def nuclear_norm(M: np.ndarray) -> float:
    """Sum of singular values. For PSD input this equals the trace."""
    return float(np.sum(singular_values(M)))


def min_eig(M: np.ndarray) -> float:
    return float(eigh_sym(M).eigvals[-1])


def is_psd(M: np.ndarray, floor: float = TOL.psd_floor) -> bool:
    return min_eig(M) >= -floor

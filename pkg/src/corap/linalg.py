"""Dense matrix kernels: QR, truncated SVD, rank-1 fits, pseudoinverse, subspace iteration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import subspace_angles

from .errors import ContractError, DegenerateRank1Error


@dataclass(frozen=True)
class TruncatedSvd:
    U: np.ndarray
    s: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return self.s.size


# entries below this count as zero when fixing column signs (columns are unit norm)
_SIGN_TOL = 1e-12


def _first_nonzero_signs(cols, tol=0.0):
    """+-1 per column so the first entry with magnitude above ``tol`` is nonnegative."""
    signs = np.ones(cols.shape[1])
    for r in range(cols.shape[1]):
        nz = np.flatnonzero(np.abs(cols[:, r]) > tol)
        if nz.size and cols[nz[0], r] < 0:
            signs[r] = -1.0
    return signs


def economy_qr(m):
    """Thin QR of a tall matrix.

    Columns of ``Q`` are sign-normalised (first nonzero entry nonnegative) and
    the rows of ``R`` flipped to match, so the factorisation is deterministic.
    Rank-deficient input is fine; ``R`` then has (near) zero diagonal entries.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < m.shape[1]:
        raise ContractError(f"economy_qr needs a tall matrix, got shape {m.shape}")
    Q, R = np.linalg.qr(m, mode="reduced")
    signs = _first_nonzero_signs(Q, tol=_SIGN_TOL)
    return Q * signs, R * signs[:, None]


def _orth(m):
    # plain Householder orthonormalisation; sign fixing is not needed mid-iteration
    return np.linalg.qr(m, mode="reduced")[0]


def truncated_svd(m, r) -> TruncatedSvd:
    """Top-``r`` singular triplets, left vectors sign-normalised."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"truncated_svd needs a matrix, got ndim={m.ndim}")
    if not 1 <= r <= min(m.shape):
        raise ContractError(f"rank {r} out of range for matrix of shape {m.shape}")
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    U, s, V = U[:, :r], s[:r], Vt[:r].T
    signs = _first_nonzero_signs(U, tol=_SIGN_TOL)
    return TruncatedSvd(U * signs, s, V * signs)


def best_rank1(m):
    """Return ``(u, v)`` with ``u v^T`` the best Frobenius rank-1 fit of ``m``.

    The leading singular value is folded into ``u``.  Raises
    :class:`DegenerateRank1Error` for an all-zero matrix.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"best_rank1 needs a matrix, got ndim={m.ndim}")
    if not np.any(m):
        raise DegenerateRank1Error()
    svd = truncated_svd(m, 1)
    return svd.U[:, 0] * svd.s[0], svd.V[:, 0]


def pinv(m):
    """Moore-Penrose pseudoinverse with cutoff ``max(rows, cols) * eps * sigma_max``."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"pinv needs a matrix, got ndim={m.ndim}")
    if m.size == 0:
        return np.zeros(m.shape[::-1])
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    cutoff = max(m.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    keep = s > cutoff
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def normalized_subspace_iteration(op, omega, power):
    """Orthonormal basis for the range of ``(T T^T)^power T omega``.

    ``op`` is anything supporting ``op @ X`` and ``op.T @ X`` (a dense matrix or
    a ``scipy.sparse.linalg.LinearOperator``).  The product is never formed:
    the block is re-orthonormalised after every application of ``T`` or
    ``T^T``, so one unit of ``power`` is a ``T^T`` pass followed by a ``T``
    pass.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if power < 0:
        raise ContractError(f"power order must be nonnegative, got {power}")
    p, q = op.shape
    if omega.ndim != 2 or omega.shape[0] != q:
        raise ContractError(f"test matrix must have {q} rows, got shape {omega.shape}")
    if omega.shape[1] > min(p, q):
        raise ContractError(
            f"sketch width {omega.shape[1]} exceeds smaller dimension of {p}x{q} operator"
        )
    Y = _orth(op @ omega)
    for _ in range(power):
        Z = _orth(op.T @ Y)
        Y = _orth(op @ Z)
    return Y


def principal_angles(a, b):
    """Principal angles (radians) between the column spaces of ``a`` and ``b``, largest first."""
    return subspace_angles(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))

"""Dense third-order tensors and the multilinear algebra built on them.

Tensors are plain 3-D ``float64`` numpy arrays in C order, so the first index
varies slowest and the third fastest.  With that layout the three unfoldings
follow the index maps

    T1[i, j*K + k] = T2[j, i*K + k] = T3[k, i*J + j] = t[i, j, k]

(0-based), which makes the CP model read

    T1 = A (B ⊙ C)^T,   T2 = B (A ⊙ C)^T,   T3 = C (A ⊙ B)^T.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

DenseTensor3 = np.ndarray

MAGIC = b"CRT3"

# axis order fed to reshape for each unfolding; 1-based mode -> transpose
_UNFOLD_AXES = {1: (0, 1, 2), 2: (1, 0, 2), 3: (2, 0, 1)}


def as_tensor3(t) -> DenseTensor3:
    """Validate and return ``t`` as a C-contiguous float64 3-D array."""
    arr = np.ascontiguousarray(t, dtype=np.float64)
    if arr.ndim != 3:
        raise ContractError(f"expected a third-order tensor, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ContractError(f"tensor dimensions must be positive, got {arr.shape}")
    return arr


def from_flat(data, dims) -> DenseTensor3:
    """Build a tensor from its flat (first-index-slowest) data and dims."""
    data = np.asarray(data, dtype=np.float64).ravel()
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ContractError(f"dims must be three positive integers, got {dims}")
    if data.size != dims[0] * dims[1] * dims[2]:
        raise ContractError(f"data length {data.size} does not match dims {dims}")
    return data.reshape(dims).copy()


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ContractError(f"mode must be 1, 2 or 3, got {mode!r}")


@dataclass(frozen=True)
class FactorTriple:
    """Factor matrices ``A`` (I x R), ``B`` (J x R), ``C`` (K x R) of a CP model."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        mats = [np.asarray(m, dtype=np.float64) for m in (self.A, self.B, self.C)]
        if any(m.ndim != 2 for m in mats):
            raise ContractError("factor matrices must be 2-D")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1 or 0 in ranks:
            raise ContractError(f"factor column counts disagree: {[m.shape for m in mats]}")
        for name, m in zip("ABC", mats):
            object.__setattr__(self, name, m)

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def dims(self):
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    def __iter__(self):
        return iter((self.A, self.B, self.C))


def matricize(t, mode) -> np.ndarray:
    """Mode-``mode`` unfolding of a third-order tensor (modes are 1-based)."""
    _check_mode(mode)
    t = as_tensor3(t)
    moved = t.transpose(_UNFOLD_AXES[mode])
    return np.ascontiguousarray(moved.reshape(moved.shape[0], -1))


def dematricize(m, mode, dims) -> DenseTensor3:
    """Inverse of :func:`matricize`."""
    _check_mode(mode)
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    axes = _UNFOLD_AXES[mode]
    moved_shape = tuple(dims[a] for a in axes)
    expected = (moved_shape[0], moved_shape[1] * moved_shape[2])
    if m.shape != expected:
        raise ContractError(f"mode-{mode} unfolding of {dims} must be {expected}, got {m.shape}")
    return np.ascontiguousarray(m.reshape(moved_shape).transpose(np.argsort(axes)))


def mode_n_product(t, g, mode) -> DenseTensor3:
    """Contract index ``mode`` of ``t`` with the columns of ``g``."""
    _check_mode(mode)
    t = as_tensor3(t)
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != t.shape[mode - 1]:
        raise ContractError(
            f"mode-{mode} product needs {t.shape[mode - 1]} columns, got matrix {g.shape}"
        )
    dims = list(t.shape)
    dims[mode - 1] = g.shape[0]
    return dematricize(g @ matricize(t, mode), mode, dims)


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product; row ``i*J + j`` holds ``a[i] * b[j]``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractError(f"khatri_rao needs equal column counts, got {a.shape} and {b.shape}")
    return (a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1])


def cpd_reconstruct(f: FactorTriple) -> DenseTensor3:
    """Dense tensor ``sum_r a_r o b_r o c_r``."""
    I, J, K = f.dims
    return (f.A @ khatri_rao(f.B, f.C).T).reshape(I, J, K)


def vec(m) -> np.ndarray:
    """Column-stacking vectorization: entry (i, j) lands at ``j*rows + i``."""
    return np.asarray(m, dtype=np.float64).ravel(order="F").copy()


def unvec(v, rows, cols) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != rows * cols:
        raise ContractError(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F").copy()


def frobenius_norm(t) -> float:
    t = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(t * t)))


def relative_residual(t, f: FactorTriple) -> float:
    """``||t - [[A, B, C]]||_F / ||t||_F`` (absolute residual if ``t`` is zero)."""
    t = as_tensor3(t)
    res = frobenius_norm(t - cpd_reconstruct(f))
    norm = frobenius_norm(t)
    return res / norm if norm > 0 else res


def write_tensor(path, t) -> None:
    """Write ``t`` in the CRT3 binary format (magic, 3 x u64 dims, f64 data, little endian)."""
    t = as_tensor3(t)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3Q", *t.shape))
        fh.write(t.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(path) -> DenseTensor3:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ContractError(f"{path}: not a CRT3 file")
    if len(raw) < 28:
        raise ContractError(f"{path}: truncated header")
    dims = struct.unpack("<3Q", raw[4:28])
    n = dims[0] * dims[1] * dims[2]
    if len(raw) != 28 + 8 * n:
        raise ContractError(f"{path}: expected {n} values for dims {dims}")
    data = np.frombuffer(raw, dtype="<f8", offset=28, count=n)
    return from_flat(data.astype(np.float64), dims)

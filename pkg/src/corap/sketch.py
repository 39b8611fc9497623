"""Randomized projectors and coupled compression of a large tensor.

A *triad* holds one orthonormal projector per mode.  Plain random projection
(RAP) uses a single triad; the coupled variant (CoRAP) builds ``M`` triads
whose first- and second-mode projectors come from power orders ``1..M`` while
all of them share one third-mode projector ``W``.  Compressing the tensor with
every triad gives ``M`` small cores that share the third-mode factor
``W^T C``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ContractError
from .linalg import normalized_subspace_iteration, truncated_svd
from .tensor import as_tensor3, frobenius_norm, matricize, mode_n_product

@dataclass(frozen=True)
class SketchConfig:
    """Sizes and seed for projector construction.

    ``oversampled_rank`` is the number of columns kept per projector and must
    be at least ``target_rank``; ``max_power`` is the number of coupled triads
    and ``shared_power`` the power order of the one third-mode sketch they
    share.
    """

    target_rank: int
    oversampled_rank: int
    max_power: int = 2
    seed: int = 0
    shared_power: int = 1

    def __post_init__(self):
        if self.target_rank < 1:
            raise ContractError(f"target_rank must be positive, got {self.target_rank}")
        if self.oversampled_rank < self.target_rank:
            raise ContractError(
                f"oversampled_rank ({self.oversampled_rank}) must be >= target_rank ({self.target_rank})"
            )
        if self.max_power < 1:
            raise ContractError(f"max_power must be >= 1, got {self.max_power}")
        if self.shared_power < 0:
            raise ContractError(f"shared_power must be >= 0, got {self.shared_power}")

    def check_dims(self, dims):
        if self.oversampled_rank > min(dims):
            raise ContractError(
                f"oversampled_rank {self.oversampled_rank} exceeds smallest tensor dimension of {tuple(dims)}"
            )


@dataclass(frozen=True)
class ProjectionTriad:
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray
    power_order: int

    def __iter__(self):
        return iter((self.U, self.V, self.W))


@dataclass(frozen=True)
class CompressedEnsemble:
    cores: List[np.ndarray]
    triads: List[ProjectionTriad]
    W: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.cores)

    @property
    def oversampled_rank(self) -> int:
        return self.W.shape[1]


def sketch_rng(seed, mode, power):
    """Independent generator for the test matrix of (mode, power order).

    Streams are keyed on (seed, mode, power) rather than drawn in sequence, so
    triads can be built in any order or in parallel with identical results.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(mode), int(power))))


def mode_projector(t, mode, width, power, seed):
    """Orthonormal ``dims[mode] x width`` projector from an order-``power`` sketch."""
    t = as_tensor3(t)
    unfolding = matricize(t, mode)
    rng = sketch_rng(seed, mode, power)
    psi = rng.standard_normal((unfolding.shape[1], width))
    basis = normalized_subspace_iteration(unfolding, psi, power)
    return truncated_svd(basis, width).U


def build_rap_projectors(t, cfg: SketchConfig, m: int) -> ProjectionTriad:
    """One triad, every mode sketched at power order ``m``."""
    t = as_tensor3(t)
    cfg.check_dims(t.shape)
    if m < 0:
        raise ContractError(f"power order must be nonnegative, got {m}")
    U, V, W = (mode_projector(t, n, cfg.oversampled_rank, m, cfg.seed) for n in (1, 2, 3))
    return ProjectionTriad(U, V, W, m)


def build_corap_triads(t, cfg: SketchConfig) -> List[ProjectionTriad]:
    """Triads for power orders ``1..max_power`` sharing a single ``W``."""
    t = as_tensor3(t)
    cfg.check_dims(t.shape)
    W = mode_projector(t, 3, cfg.oversampled_rank, cfg.shared_power, cfg.seed)
    triads = []
    for m in range(1, cfg.max_power + 1):
        U = mode_projector(t, 1, cfg.oversampled_rank, m, cfg.seed)
        V = mode_projector(t, 2, cfg.oversampled_rank, m, cfg.seed)
        triads.append(ProjectionTriad(U, V, W, m))
    return triads


def _check_triad(dims, triad):
    for n, P in enumerate(triad, start=1):
        if P.ndim != 2 or P.shape[0] != dims[n - 1]:
            raise ContractError(f"mode-{n} projector of shape {P.shape} does not fit tensor {dims}")


def compress(t, triad: ProjectionTriad) -> np.ndarray:
    """Core ``t x1 U^T x2 V^T x3 W^T``."""
    t = as_tensor3(t)
    _check_triad(t.shape, triad)
    # largest reduction first keeps the intermediate small
    g = mode_n_product(t, triad.U.T, 1)
    g = mode_n_product(g, triad.V.T, 2)
    return mode_n_product(g, triad.W.T, 3)


def back_project_core(core, triad: ProjectionTriad) -> np.ndarray:
    """Lift a core back to full size: ``core x1 U x2 V x3 W``."""
    g = mode_n_product(core, triad.U, 1)
    g = mode_n_product(g, triad.V, 2)
    return mode_n_product(g, triad.W, 3)


def build_ensemble(t, cfg: SketchConfig, verify: bool = False) -> CompressedEnsemble:
    """Coupled compression: triads from :func:`build_corap_triads` and one core per triad.

    With ``verify`` set, each core is recomputed by direct contraction and
    compared against the fast path (relative tolerance 1e-10).
    """
    t = as_tensor3(t)
    triads = build_corap_triads(t, cfg)
    W = triads[0].W
    # the mode-3 contraction is common to all cores, do it once
    t3 = mode_n_product(t, W.T, 3)
    cores = []
    for triad in triads:
        g = mode_n_product(t3, triad.U.T, 1)
        cores.append(mode_n_product(g, triad.V.T, 2))
    if verify:
        for m, (core, triad) in enumerate(zip(cores, triads), start=1):
            direct = np.einsum("ijk,ia,jb,kc->abc", t, triad.U, triad.V, triad.W, optimize=True)
            scale = max(frobenius_norm(direct), np.finfo(float).tiny)
            err = frobenius_norm(core - direct) / scale
            if err > 1e-10:
                raise AssertionError(f"core {m} disagrees with direct contraction (rel err {err:.3e})")
            if triad.W is not W:
                raise AssertionError(f"triad {m} does not share the third-mode projector")
    return CompressedEnsemble(cores, triads, W)

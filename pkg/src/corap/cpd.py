"""Alternating least squares CP decomposition of a single tensor, plus the RAP baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import ContractError
from .linalg import pinv
from .sketch import SketchConfig, build_rap_projectors, compress
from .tensor import FactorTriple, as_tensor3, frobenius_norm, khatri_rao, matricize, relative_residual


@dataclass(frozen=True)
class AlsOptions:
    """Stopping rule and initialisation for ALS.

    A run stops once the relative residual ``||T - model|| / ||T||`` changes
    by at most ``rel_tol`` between sweeps, or after ``max_iters`` sweeps.
    ``init`` (a :class:`FactorTriple`) replaces random initialisation; with
    random init the best of ``n_restarts`` independent starts is kept.
    """

    max_iters: int = 500
    rel_tol: float = 1e-8
    init: Optional[FactorTriple] = None
    seed: int = 0
    n_restarts: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ContractError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol >= 0:
            raise ContractError(f"rel_tol must be >= 0, got {self.rel_tol}")
        if self.n_restarts < 1:
            raise ContractError(f"n_restarts must be >= 1, got {self.n_restarts}")


# settings of the stand-alone "direct CPD" baseline
DIRECT_OPTIONS = AlsOptions(max_iters=500, rel_tol=1e-8, n_restarts=5)


@dataclass
class CpdResult:
    factors: FactorTriple
    rel_residual: float
    iters: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)


def gram_hadamard(*mats):
    """Elementwise product of the Gram matrices ``X^T X`` of ``mats``."""
    out = None
    for m in mats:
        g = m.T @ m
        out = g if out is None else out * g
    return out


def ls_factor_update(unfolding, left, right):
    """LS solution ``X`` of ``unfolding ~ X (left ⊙ right)^T`` via normal equations."""
    return unfolding @ khatri_rao(left, right) @ pinv(gram_hadamard(left, right))


def _safe_norms(m):
    n = np.linalg.norm(m, axis=0)
    n[n == 0] = 1.0
    return n


def random_factors(dims, rank, rng) -> FactorTriple:
    return FactorTriple(*(rng.standard_normal((d, rank)) for d in dims))


# relative residual under which it is recomputed from the explicit difference
_EXPLICIT_RESIDUAL_BELOW = 1e-2


def _als_run(unfoldings, norm_t, factors, opts, start_residual):
    scale = norm_t if norm_t > 0 else 1.0
    T1, T2, T3 = unfoldings
    A, B, C = factors
    history = []
    prev = start_residual
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        A = ls_factor_update(T1, B, C)
        B = ls_factor_update(T2, A, C)
        AB = khatri_rao(A, B)
        mttkrp = T3 @ AB
        gram_ab = gram_hadamard(A, B)
        C = mttkrp @ pinv(gram_ab)
        # ||T||^2 - 2<T, X> + ||X||^2 is cheap but cancels badly near an exact fit
        sq = norm_t**2 - 2.0 * np.sum(mttkrp * C) + np.sum(gram_ab * (C.T @ C))
        res = np.sqrt(max(sq, 0.0)) / scale
        if res < _EXPLICIT_RESIDUAL_BELOW:
            res = np.linalg.norm(T3 - C @ AB.T) / scale
        # unit columns in A and B, scale carried by C
        na, nb = _safe_norms(A), _safe_norms(B)
        A, B, C = A / na, B / nb, C * (na * nb)
        history.append(res)
        if abs(prev - res) <= opts.rel_tol:
            converged = True
            break
        prev = res
    return FactorTriple(A, B, C), history, it, converged


def als_cpd(t, rank: int, opts: AlsOptions = AlsOptions()) -> CpdResult:
    """Rank-``rank`` CP decomposition of ``t`` by alternating least squares.

    Each sweep updates ``A``, ``B`` and ``C`` in turn by exact least squares
    on the matching unfolding, so the residual is nonincreasing.  Random
    starts run one full sweep before the residual is first measured.
    """
    t = as_tensor3(t)
    if not 1 <= rank <= min(t.shape):
        raise ContractError(f"rank {rank} outside 1..{min(t.shape)} for tensor of shape {t.shape}")
    unfoldings = tuple(matricize(t, n) for n in (1, 2, 3))
    norm_t = frobenius_norm(t)

    if opts.init is not None:
        init = opts.init
        if init.dims != t.shape or init.rank != rank:
            raise ContractError(
                f"initial factors {init.dims} rank {init.rank} do not match tensor {t.shape} rank {rank}"
            )
        starts = [(init, relative_residual(t, init))]
    else:
        starts = []
        for k in range(opts.n_restarts):
            rng = np.random.default_rng(np.random.SeedSequence(int(opts.seed), spawn_key=(k,)))
            starts.append((random_factors(t.shape, rank, rng), math.inf))

    best = None
    for init, r0 in starts:
        factors, history, iters, converged = _als_run(unfoldings, norm_t, init, opts, r0)
        if best is None or history[-1] < best.rel_residual:
            best = CpdResult(factors, history[-1], iters, converged, history)
    return best


def direct_cpd(t, rank: int, seed: int = 0, opts: AlsOptions = DIRECT_OPTIONS) -> CpdResult:
    """ALS on the full tensor with the baseline restart settings."""
    return als_cpd(t, rank, replace(opts, seed=seed))


def rap_cpd(t, cfg: SketchConfig, m: int, opts: AlsOptions = AlsOptions()) -> CpdResult:
    """CPD through a single random projection at power order ``m``.

    The core is decomposed with :func:`als_cpd` and the factors are lifted
    back with the projectors.  ``opts.init`` may be given at core size or at
    full size (it is then projected).  ``rel_residual`` is measured on ``t`` itself.
    """
    t = as_tensor3(t)
    triad = build_rap_projectors(t, cfg, m)
    core = compress(t, triad)
    if opts.init is not None and opts.init.dims == t.shape:
        # full-size initial factors are projected into core coordinates
        A0, B0, C0 = opts.init
        opts = replace(opts, init=FactorTriple(triad.U.T @ A0, triad.V.T @ B0, triad.W.T @ C0))
    inner = als_cpd(core, cfg.target_rank, opts)
    A, B, C = inner.factors
    full = FactorTriple(triad.U @ A, triad.V @ B, triad.W @ C)
    return CpdResult(full, relative_residual(t, full), inner.iters, inner.converged, inner.history)

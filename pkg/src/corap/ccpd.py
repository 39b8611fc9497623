"""Coupled CPD of a compressed ensemble and the end-to-end CoRAP pipeline.

Every core ``G^(m)`` of the ensemble follows ``[[A^(m), B^(m), C']]`` plus
noise, with ``C'`` common to all cores.  The decomposition is initialised
algebraically (CPD of one anchor core, then a pseudoinverse against ``C'``
and rank-1 fits for the others), refined by coupled ALS, and the best fitting
core is lifted back to full size.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .cpd import AlsOptions, als_cpd, gram_hadamard, ls_factor_update, _safe_norms
from .errors import ContractError, DegenerateRank1Error, StageError
from .linalg import best_rank1, pinv
from .sketch import CompressedEnsemble, SketchConfig, build_ensemble
from .tensor import FactorTriple, as_tensor3, khatri_rao, matricize, unvec

# condition number of C' above which the algebraic step is flagged
CONDITION_WARN = 1e10


@dataclass
class CoupledFactors:
    """Per-core ``(A^(m), B^(m))`` pairs sharing one third-mode factor ``C``.

    ``history`` holds the pooled objective after each coupled-ALS sweep and
    ``notes`` any conditioning warnings raised while building the factors.
    """

    A: List[np.ndarray]
    B: List[np.ndarray]
    C: np.ndarray
    history: List[float] = field(default_factory=list, repr=False)
    iters: int = 0
    converged: bool = False
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.A) != len(self.B) or not self.A:
            raise ContractError("need one (A, B) pair per core")
        R = self.C.shape[1]
        if any(a.shape[1] != R or b.shape[1] != R for a, b in zip(self.A, self.B)):
            raise ContractError("all coupled factors must have the same number of columns")

    @property
    def rank(self) -> int:
        return self.C.shape[1]

    def __len__(self):
        return len(self.A)

    def core_factors(self, m) -> FactorTriple:
        """Factors of core ``m`` (1-based)."""
        return FactorTriple(self.A[m - 1], self.B[m - 1], self.C)


@dataclass
class CcpdResult:
    coupled: CoupledFactors
    per_core_rel_residuals: List[float]
    per_core_sq_residuals: List[float]
    m_opt: int
    full_factors: FactorTriple
    total_time: float


def core_sq_residuals(ensemble: CompressedEnsemble, coupled: CoupledFactors) -> List[float]:
    """``||G^(m) - [[A^(m), B^(m), C']]||_F^2`` for every core."""
    if len(ensemble) != len(coupled):
        raise ContractError(f"{len(ensemble)} cores but {len(coupled)} factor pairs")
    out = []
    for g, a, b in zip(ensemble.cores, coupled.A, coupled.B):
        g3 = matricize(g, 3)
        out.append(float(np.sum((g3 - coupled.C @ khatri_rao(a, b).T) ** 2)))
    return out


def pooled_objective(ensemble, coupled) -> float:
    return float(sum(core_sq_residuals(ensemble, coupled)))


def algebraic_ccpd(
    ensemble: CompressedEnsemble, rank: int, opts: AlsOptions = AlsOptions(), anchor: int = 1
) -> CoupledFactors:
    """Algebraic coupled CPD.

    The anchor core (default the first) is decomposed by ALS, fixing ``C'``.
    For every other core, ``G3^T pinv(C'^T)`` is ``A ⊙ B`` up to noise, so
    each of its columns unvectorises to a rank-1 matrix from which the pair
    ``(a_r, b_r)`` is read off.  Column order follows ``C'``, hence the anchor
    core, so no matching step is needed.
    """
    M = len(ensemble)
    if M == 0:
        raise ContractError("empty ensemble")
    if not 1 <= anchor <= M:
        raise ContractError(f"anchor core {anchor} outside 1..{M}")
    Rp = ensemble.oversampled_rank
    if not 1 <= rank <= Rp:
        raise ContractError(f"rank {rank} outside 1..{Rp}")

    base = als_cpd(ensemble.cores[anchor - 1], rank, opts)
    A0, B0, C = base.factors
    notes = []
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > CONDITION_WARN:
        notes.append(f"shared factor is ill conditioned (cond={cond:.3g})")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)

    C_pinv_t = pinv(C.T)
    As, Bs = [], []
    for m, g in enumerate(ensemble.cores, start=1):
        if m == anchor:
            As.append(A0)
            Bs.append(B0)
            continue
        # rows of G3^T are indexed i*R' + j, so each column is kron(a_r, b_r)
        kr = matricize(g, 3).T @ C_pinv_t
        a = np.empty((Rp, rank))
        b = np.empty((Rp, rank))
        for r in range(rank):
            # column-stacking unvec of kron(a, b) is b a^T
            try:
                b[:, r], a[:, r] = best_rank1(unvec(kr[:, r], Rp, Rp))
            except DegenerateRank1Error:
                raise DegenerateRank1Error(component=(m, r + 1)) from None
        As.append(a)
        Bs.append(b)
    return CoupledFactors(As, Bs, C, notes=notes)


def coupled_als(
    ensemble: CompressedEnsemble, init: CoupledFactors, opts: AlsOptions = AlsOptions()
) -> CoupledFactors:
    """Refine coupled factors by block coordinate descent.

    One sweep updates ``A^(1), B^(1), ..., A^(M), B^(M)`` on their own cores,
    then the shared ``C'`` from all mode-3 unfoldings stacked side by side.
    Stops when the pooled relative residual moves by at most ``opts.rel_tol``.
    """
    M = len(ensemble)
    if len(init) != M:
        raise ContractError(f"{M} cores but {len(init)} initial factor pairs")
    Rp = ensemble.oversampled_rank
    for a, b in zip(init.A, init.B):
        if a.shape[0] != Rp or b.shape[0] != Rp:
            raise ContractError("initial factors do not match core size")
    if init.C.shape[0] != Rp:
        raise ContractError("initial shared factor does not match core size")

    G1 = [matricize(g, 1) for g in ensemble.cores]
    G2 = [matricize(g, 2) for g in ensemble.cores]
    G3 = [matricize(g, 3) for g in ensemble.cores]
    total = float(sum(np.sum(g * g) for g in G3)) or 1.0

    A = [a.copy() for a in init.A]
    B = [b.copy() for b in init.B]
    C = init.C.copy()
    prev = np.sqrt(pooled_objective(ensemble, init) / total)
    history = []
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        for m in range(M):
            A[m] = ls_factor_update(G1[m], B[m], C)
            B[m] = ls_factor_update(G2[m], A[m], C)
        krs = [khatri_rao(a, b) for a, b in zip(A, B)]
        rhs = sum(g3 @ kr for g3, kr in zip(G3, krs))
        gram = sum(gram_hadamard(a, b) for a, b in zip(A, B))
        C = rhs @ pinv(gram)
        obj = float(sum(np.sum((g3 - C @ kr.T) ** 2) for g3, kr in zip(G3, krs)))
        # unit columns in B^(m) and C', scale carried by A^(m)
        nc = _safe_norms(C)
        C = C / nc
        for m in range(M):
            nb = _safe_norms(B[m])
            B[m] = B[m] / nb
            A[m] = A[m] * (nb * nc)
        history.append(obj)
        res = np.sqrt(obj / total)
        if abs(prev - res) <= opts.rel_tol:
            converged = True
            break
        prev = res
    return CoupledFactors(A, B, C, history=history, iters=it, converged=converged, notes=list(init.notes))


def selection_scores(ensemble: CompressedEnsemble, coupled: CoupledFactors, criterion: str = "core"):
    """Per-core scores minimised by :func:`select_m_opt`.

    ``"core"`` scores each core by its own squared residual.  ``"data"``
    scores the fit of the lifted model to the full tensor: because the
    projectors have orthonormal columns,
    ``||T - X_m||^2 = ||T||^2 - ||G^(m)||^2 + ||G^(m) - model_m||^2``,
    so dropping the common ``||T||^2`` leaves a quantity computable from the
    cores alone.
    """
    sq = np.asarray(core_sq_residuals(ensemble, coupled))
    if criterion == "core":
        return sq
    if criterion == "data":
        return sq - np.array([np.sum(g * g) for g in ensemble.cores])
    raise ContractError(f"unknown selection criterion {criterion!r}")


def select_m_opt(ensemble: CompressedEnsemble, coupled: CoupledFactors, criterion: str = "core") -> int:
    """1-based index of the best fitting core (smallest index on ties)."""
    return int(np.argmin(selection_scores(ensemble, coupled, criterion))) + 1


def back_project(ensemble: CompressedEnsemble, coupled: CoupledFactors, m_opt: int) -> FactorTriple:
    """Full-size factors ``U A^(m), V B^(m), W C'`` from core ``m_opt``."""
    if not 1 <= m_opt <= len(ensemble):
        raise ContractError(f"m_opt {m_opt} outside 1..{len(ensemble)}")
    triad = ensemble.triads[m_opt - 1]
    return FactorTriple(
        triad.U @ coupled.A[m_opt - 1], triad.V @ coupled.B[m_opt - 1], ensemble.W @ coupled.C
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def corap_cpd(
    t, cfg: SketchConfig, rank: int = None, opts: AlsOptions = AlsOptions(), anchor: int = 1,
    selection: str = "core", verify: bool = False,
) -> CcpdResult:
    """CPD of ``t`` through coupled random projections.

    Runs ensemble construction, algebraic coupled CPD, coupled ALS, selection
    of the best fitting core (see :func:`selection_scores`) and
    back-projection.  A failure in any stage is re-raised as
    :class:`StageError` naming that stage.
    """
    start = time.perf_counter()
    t = _stage("input", as_tensor3, t)
    rank = cfg.target_rank if rank is None else rank
    ensemble = _stage("build_ensemble", build_ensemble, t, cfg, verify=verify)
    init = _stage("algebraic_ccpd", algebraic_ccpd, ensemble, rank, opts, anchor)
    coupled = _stage("coupled_als", coupled_als, ensemble, init, opts)
    m_opt = _stage("select_m_opt", select_m_opt, ensemble, coupled, selection)
    full = _stage("back_project", back_project, ensemble, coupled, m_opt)
    sq = core_sq_residuals(ensemble, coupled)
    tiny = np.finfo(float).tiny
    rel = [float(np.sqrt(s / max(np.sum(g * g), tiny))) for s, g in zip(sq, ensemble.cores)]
    return CcpdResult(coupled, rel, sq, m_opt, full, time.perf_counter() - start)

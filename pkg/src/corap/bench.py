"""Synthetic instances, the factor-matching error metric and the Monte Carlo runner."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ccpd import corap_cpd
from .cpd import DIRECT_OPTIONS, AlsOptions, als_cpd, rap_cpd
from .errors import ContractError, StageError
from .sketch import SketchConfig
from .tensor import FactorTriple, cpd_reconstruct, frobenius_norm

ALGORITHMS = ("direct", "rap", "corap")

CSV_FIELDS = (
    "trial", "algorithm", "I", "J", "K", "R", "Rprime", "M",
    "snr_db", "mre", "wall_time_s", "m_opt", "status",
)


def noise_level(snr_db):
    """Noise power level for unit signal power: ``10 ** (-snr_db / 10)``."""
    return 0.0 if math.isinf(snr_db) and snr_db > 0 else 10.0 ** (-snr_db / 10.0)


def generate_instance(dims, rank, snr_db, seed) -> Tuple[np.ndarray, FactorTriple]:
    """Noisy rank-``rank`` tensor and its ground-truth factors.

    Factors and noise are i.i.d. standard Gaussian.  The signal is rescaled
    to unit mean power (the scale is folded into the returned ``A``), so with
    signal level 1 and noise level ``10**(-snr_db/10)`` the two power levels
    differ by exactly ``snr_db``.  ``snr_db=inf`` gives the noiseless tensor.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ContractError(f"dims must be three positive integers, got {dims}")
    if not 1 <= rank:
        raise ContractError(f"rank must be positive, got {rank}")
    rng = np.random.default_rng(seed)
    A, B, C = (rng.standard_normal((d, rank)) for d in dims)
    rms = frobenius_norm(cpd_reconstruct(FactorTriple(A, B, C))) / math.sqrt(np.prod(dims))
    truth = FactorTriple(A / rms, B, C)
    signal = cpd_reconstruct(truth)
    p_n = noise_level(snr_db)
    if p_n == 0.0:
        return signal, truth
    noise = rng.standard_normal(dims)
    return signal + math.sqrt(p_n) * noise, truth


def _scaled_column_costs(H, Ht):
    """cost[r, s] = min_a ||h_r - a * ht_s||^2."""
    hh = np.sum(H * H, axis=0)
    tt = np.sum(Ht * Ht, axis=0)
    cross = H.T @ Ht
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(tt > 0, cross**2 / tt, 0.0)
    return np.maximum(hh[:, None] - gain, 0.0)


def _matched_error(H, Ht, perm):
    """||H - Ht P S||_F^2 for assignment ``perm`` with optimal per-column scales."""
    Hp = Ht[:, perm]
    tt = np.sum(Hp * Hp, axis=0)
    scale = np.divide(np.sum(H * Hp, axis=0), tt, out=np.zeros_like(tt), where=tt > 0)
    return float(np.sum((H - Hp * scale) ** 2))


def mean_relative_error(truth: FactorTriple, est: FactorTriple, strict_perm: bool = False) -> float:
    """Permutation- and scale-invariant mean relative factor error.

    For each factor the estimate's columns are optimally assigned and scaled
    to the true ones (least squares), and ``||H - Ht P S||^2 / ||H||^2`` is
    averaged over the three factors.  Factors are matched independently
    unless ``strict_perm`` asks for one permutation shared by all three.
    """
    if truth.dims != est.dims or truth.rank != est.rank:
        raise ContractError(
            f"estimate {est.dims} rank {est.rank} does not match truth {truth.dims} rank {truth.rank}"
        )
    pairs = list(zip(truth, est))
    norms = [float(np.sum(H * H)) for H, _ in pairs]
    costs = [_scaled_column_costs(H, Ht) / n for (H, Ht), n in zip(pairs, norms)]
    if strict_perm:
        rows, cols = linear_sum_assignment(sum(costs))
        perms = [cols[np.argsort(rows)]] * 3
    else:
        perms = []
        for c in costs:
            rows, cols = linear_sum_assignment(c)
            perms.append(cols[np.argsort(rows)])
    return sum(_matched_error(H, Ht, p) / n for (H, Ht), p, n in zip(pairs, perms, norms)) / 3.0


@dataclass(frozen=True)
class RunRecord:
    trial: int
    algorithm: str
    I: int
    J: int
    K: int
    R: int
    Rprime: int
    M: int
    snr_db: float
    mre: float
    wall_time_s: float
    m_opt: Optional[int] = None
    status: str = "ok"

    def as_row(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return format(v, ".17g")
            return str(v)

        return [fmt(getattr(self, name)) for name in CSV_FIELDS]

    @classmethod
    def from_row(cls, row):
        kw = {}
        for f in fields(cls):
            raw = row[f.name]
            if f.name in ("algorithm", "status"):
                kw[f.name] = raw
            elif f.name == "m_opt":
                kw[f.name] = int(raw) if raw else None
            elif f.name in ("snr_db", "mre", "wall_time_s"):
                kw[f.name] = float(raw)
            else:
                kw[f.name] = int(raw)
        return cls(**kw)


def write_records(path, records, append=False):
    path = Path(path)
    new = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_FIELDS)
        for rec in records:
            w.writerow(rec.as_row())


def read_records(path) -> List[RunRecord]:
    with open(path, newline="") as fh:
        return [RunRecord.from_row(row) for row in csv.DictReader(fh)]


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo sweep.

    ``oversample`` is the projector width R'; with ``oversample_ratio`` set
    it is instead ``ceil(ratio * R)`` for every rank in the sweep.
    ``rap_power`` is the power order of the RAP baseline; ``shared_power``
    and ``selection`` are passed through to the coupled pipeline.
    """

    dims: Tuple[int, int, int] = (100, 100, 100)
    rank: int = 10
    oversample: int = 20
    max_power: int = 2
    snr_db: Tuple[float, ...] = (10.0,)
    rank_sweep: Optional[Tuple[int, ...]] = None
    algorithms: Tuple[str, ...] = ALGORITHMS
    n_trials: int = 1
    seed: int = 0
    output_path: Optional[str] = None
    oversample_ratio: Optional[float] = None
    rap_power: int = 1
    shared_power: int = 1
    selection: str = "core"
    strict_perm: bool = False
    als: AlsOptions = field(default=DIRECT_OPTIONS, repr=False)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ContractError(f"n_trials must be >= 1, got {self.n_trials}")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown or not self.algorithms:
            raise ContractError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ContractError(f"dims must be three positive integers, got {self.dims}")
        if not self.snr_db:
            raise ContractError("need at least one SNR value")
        for r in self.ranks:
            rp = self.oversample_for(r)
            if not (1 <= r <= rp <= min(self.dims)):
                raise ContractError(f"need 1 <= R ({r}) <= R' ({rp}) <= min dims {min(self.dims)}")
        if self.max_power < 1:
            raise ContractError(f"max_power must be >= 1, got {self.max_power}")

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(self.rank_sweep) if self.rank_sweep else (self.rank,)

    def oversample_for(self, rank) -> int:
        if self.oversample_ratio is not None:
            return int(math.ceil(self.oversample_ratio * rank))
        return self.oversample


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from a tuple of nonnegative integers."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def run_algorithm(name, t, rank, oversample, max_power, seed, als=DIRECT_OPTIONS, rap_power=1,
                  shared_power=1, selection="core"):
    """Run one algorithm; returns ``(factors, m_opt)``."""
    opts = replace(als, seed=seed)
    if name == "direct":
        return als_cpd(t, rank, opts).factors, None
    cfg = SketchConfig(rank, oversample, max_power, seed=seed, shared_power=shared_power)
    if name == "rap":
        return rap_cpd(t, cfg, rap_power, opts).factors, None
    if name == "corap":
        res = corap_cpd(t, cfg, rank, opts, selection=selection)
        return res.full_factors, res.m_opt
    raise ContractError(f"unknown algorithm {name!r}")


def _error_tag(exc):
    if isinstance(exc, StageError):
        return f"error:{exc.stage}"
    return f"error:{type(exc).__name__}"


def run_experiment(cfg: ExperimentConfig, verbose: bool = False) -> List[RunRecord]:
    """Run every trial x SNR x rank x algorithm cell of ``cfg``.

    Algorithms in one cell see the same instance and the same algorithm seed,
    so their results are paired.  Records are appended to
    ``cfg.output_path`` as they are produced.  A failing run is recorded with
    ``mre = nan`` and an error status instead of stopping the sweep.
    """
    I, J, K = cfg.dims
    records = []
    if cfg.output_path:
        write_records(cfg.output_path, [])
    for trial in range(cfg.n_trials):
        for si, snr in enumerate(cfg.snr_db):
            for ri, rank in enumerate(cfg.ranks):
                rp = cfg.oversample_for(rank)
                t, truth = generate_instance(cfg.dims, rank, snr, derive_seed(cfg.seed, trial, si, ri, 0))
                alg_seed = derive_seed(cfg.seed, trial, si, ri, 1)
                cell = []
                for name in cfg.algorithms:
                    start = time.perf_counter()
                    try:
                        est, m_opt = run_algorithm(
                            name, t, rank, rp, cfg.max_power, alg_seed, cfg.als, cfg.rap_power,
                            cfg.shared_power, cfg.selection,
                        )
                        elapsed = time.perf_counter() - start
                        mre, status = mean_relative_error(truth, est, cfg.strict_perm), "ok"
                    except Exception as exc:  # recorded, sweep continues
                        elapsed = time.perf_counter() - start
                        mre, m_opt, status = math.nan, None, _error_tag(exc)
                    cell.append(
                        RunRecord(trial, name, I, J, K, rank, rp, cfg.max_power, float(snr), mre,
                                  max(elapsed, 1e-9), m_opt, status)
                    )
                if cfg.output_path:
                    write_records(cfg.output_path, cell, append=True)
                records.extend(cell)
    if verbose:
        print(format_summary(summarize(records)))
    return records


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    M: int
    snr_db: float
    rank: int
    n: int
    failures: int
    mean_mre: float
    stderr_mre: float
    mean_time_s: float
    stderr_time_s: float


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def summarize(records: Sequence[RunRecord]) -> List[SummaryRow]:
    """Mean and standard error of MRE and wall time per (algorithm, M, SNR, rank) cell.

    Failed (NaN) runs are left out of the means and counted in ``failures``.
    """
    if not records:
        raise ContractError("nothing to summarize")
    order = {name: i for i, name in enumerate(ALGORITHMS)}
    cells = {}
    for rec in records:
        cells.setdefault((rec.algorithm, rec.M, rec.snr_db, rec.R), []).append(rec)
    rows = []
    for key in sorted(cells, key=lambda k: (k[3], k[2], k[1], order.get(k[0], len(order)), k[0])):
        group = cells[key]
        ok = [r for r in group if not math.isnan(r.mre)]
        mre, mre_se = _mean_se([r.mre for r in ok])
        wt, wt_se = _mean_se([r.wall_time_s for r in ok])
        rows.append(SummaryRow(*key, len(group), len(group) - len(ok), mre, mre_se, wt, wt_se))
    return rows


def write_summary(path, rows):
    names = [f.name for f in fields(SummaryRow)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in (getattr(row, n) for n in names)])


def format_summary(rows) -> str:
    header = f"{'algorithm':<9} {'M':>2} {'snr_db':>7} {'R':>4} {'n':>4} {'fail':>4} {'mean_mre':>11} {'stderr':>10} {'time_s':>9} {'stderr':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.algorithm:<9} {r.M:>2} {r.snr_db:>7.2f} {r.rank:>4} {r.n:>4} {r.failures:>4} "
            f"{r.mean_mre:>11.4e} {r.stderr_mre:>10.3e} {r.mean_time_s:>9.4f} {r.stderr_time_s:>9.4f}"
        )
    return "\n".join(lines)

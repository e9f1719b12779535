"""Seeded Monte Carlo engine: regret estimation, bound checks and scaling fits."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from scipy import stats

from query_hedge.instances import (
    FixedInstance,
    IidBernoulliInstance,
    InstanceSpec,
    InvalidInstanceError,
    MAX_ENUMERATION_ACTIONS,
    LossSequence,
    LowerBoundFamily,
    LowerBoundInstance,
    TwoExpertEpsInstance,
    instance_stats,
    sample_losses,
)
from query_hedge.learners import LearnerConfig, Trajectory, randomness_width, simulate_batch, split_randomness
from query_hedge.oracles import DEFAULT_BOUND, BoundSpec, theorem_bound
from query_hedge.seeding import RunStreams

BENCHMARKS = ("best_fixed_hindsight", "best_mean_pseudo")
REPORT_FIELDS = (
    "experiment_id", "algorithm", "feedback", "T", "n", "k", "runs", "mean_regret", "std_error",
    "bound_name", "bound_value", "bound_satisfied", "mean_queries", "slope_window",
)

# Largest number of loss entries (runs * n * T) simulated at once. The chunking
# depends only on n and T, never on the worker count.
CHUNK_ELEMENTS = 1 << 22

_ANALYTIC = (LowerBoundInstance, IidBernoulliInstance)


class ExperimentError(RuntimeError):
    """A learner or instance failure, tagged with the run that triggered it."""


def compute_regret(
    trajectory: Trajectory,
    losses: LossSequence,
    benchmark: str = "best_fixed_hindsight",
    instance: InstanceSpec | None = None,
) -> float:
    """Regret of one trajectory from its per-step expected losses.

    ``best_mean_pseudo`` subtracts T * mu(i*) and needs the analytic
    ``instance`` the losses were drawn from.
    """
    if (trajectory.n, trajectory.T) != (losses.n, losses.T):
        raise ValueError("trajectory and losses disagree on (n, T)")
    total = trajectory.total_expected_loss
    if benchmark == "best_fixed_hindsight":
        return total - losses.best_fixed_loss
    if benchmark == "best_mean_pseudo":
        return total - _pseudo_offset(instance, losses.T)
    raise ValueError(f"benchmark must be one of {BENCHMARKS}, got {benchmark!r}")


def _pseudo_offset(instance: InstanceSpec | None, T: int) -> float:
    if instance is None or isinstance(instance, (FixedInstance, TwoExpertEpsInstance)):
        raise ValueError("pseudo-regret needs an analytic stochastic instance (lower_bound or iid_bernoulli)")
    st = instance_stats(instance)
    return T * float(st.means[st.best_action])


# --------------------------------------------------------------------------- #
# Plans and reports
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class ExperimentPlan:
    instance: InstanceSpec | LowerBoundFamily
    learner: LearnerConfig
    k_grid: tuple[int, ...]
    runs: int
    master_seed: int
    benchmark: str = "best_fixed_hindsight"
    bound: str | None = None  # theorem id; None picks the learner's own bound
    experiment_id: str = "experiment"
    z: float = 3.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "k_grid", tuple(int(k) for k in self.k_grid))
        if self.runs < 1:
            raise ValueError(f"runs must be >= 1, got {self.runs}")
        if not self.k_grid:
            raise ValueError("k_grid must be non-empty")
        T = self.learner.T
        if (self.instance.n, self.instance.T) != (self.learner.n, T):
            raise ValueError(
                f"instance is {self.instance.n}x{self.instance.T} but learner expects {self.learner.n}x{T}"
            )
        bad = [k for k in self.k_grid if not 0 <= k <= T]
        if bad:
            raise ValueError(f"k_grid entries must lie in [0, T={T}], got {bad}")
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"benchmark must be one of {BENCHMARKS}, got {self.benchmark!r}")

    @property
    def bound_name(self) -> str:
        return self.bound or DEFAULT_BOUND[self.learner.algorithm]


@dataclass(frozen=True)
class RegretRow:
    k: int
    runs: int
    mean_regret: float
    std_error: float
    bound_name: str
    bound_value: float
    precondition_met: bool
    bound_satisfied: bool
    mean_queries: float
    mean_loss: float
    loss_std_error: float
    # Pseudo-regret estimated as sum_t (expected loss - l_t(i*)); same mean as
    # the best_mean_pseudo benchmark but without the noise of the loss sums.
    paired_pseudo_regret: float = float("nan")
    paired_std_error: float = float("nan")
    slope_window: str = ""


@dataclass
class RegretReport:
    experiment_id: str
    algorithm: str
    feedback: str
    T: int
    n: int
    benchmark: str
    rows: list[RegretRow]
    skipped: dict[int, str] = field(default_factory=dict)

    @property
    def all_satisfied(self) -> bool:
        return all(r.bound_satisfied for r in self.rows)

    def row(self, k: int) -> RegretRow:
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)

    def with_slope_window(self, k_min: float, k_max: float) -> "RegretReport":
        label = f"{_fmt(k_min)}:{_fmt(k_max)}"
        rows = [replace(r, slope_window=label) if k_min <= r.k <= k_max else r for r in self.rows]
        return replace(self, rows=rows)

    def records(self) -> list[dict[str, Any]]:
        out = []
        for r in self.rows:
            out.append({
                "experiment_id": self.experiment_id,
                "algorithm": self.algorithm,
                "feedback": self.feedback,
                "T": self.T,
                "n": self.n,
                "k": r.k,
                "runs": r.runs,
                "mean_regret": r.mean_regret,
                "std_error": r.std_error,
                "bound_name": r.bound_name,
                "bound_value": r.bound_value,
                "bound_satisfied": r.bound_satisfied,
                "mean_queries": r.mean_queries,
                "slope_window": r.slope_window,
            })
        return out

    def to_csv(self) -> str:
        return records_to_csv(self.records(), REPORT_FIELDS)

    def to_json(self) -> str:
        return json.dumps(self.records(), indent=2) + "\n"


def _fmt(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)
    return str(value)


def records_to_csv(records: Sequence[dict[str, Any]], fields: Sequence[str] | None = None) -> str:
    """CSV text with full-precision floats and lowercase booleans."""
    if fields is None:
        fields = []
        for rec in records:
            fields.extend(f for f in rec if f not in fields)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for rec in records:
        writer.writerow(["" if rec.get(f) is None else _fmt(rec.get(f)) for f in fields])
    return buf.getvalue()


# --------------------------------------------------------------------------- #
# Monte Carlo
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class _Chunk:
    instance: InstanceSpec
    config: LearnerConfig
    master_seed: int
    start: int
    stop: int
    offset: float | None  # T * mu(i*) for pseudo-regret, None for hindsight
    best_mean_action: int | None  # i* of an analytic instance, for the paired estimator


def _run_chunk(chunk: _Chunk) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Regret, queries, realized loss and paired pseudo-regret for runs [start, stop) of one cell.

    Each run's generator first draws the loss sequence (stochastic instances
    only), then the learner's uniforms.
    """
    inst, config = chunk.instance, chunk.config
    k = config.k
    size = chunk.stop - chunk.start
    stochastic = inst.stochastic
    losses = np.empty((size, config.n, config.T)) if stochastic else sample_losses(inst, None)
    u = np.empty((size, randomness_width(config)))
    streams = RunStreams()
    for j in range(size):
        r = chunk.start + j
        try:
            rng = streams.reset(chunk.master_seed, k, r)
            if stochastic:
                losses[j] = sample_losses(inst, rng)
            rng.random(out=u[j])
        except Exception as exc:  # pragma: no cover - context wrapper
            raise ExperimentError(f"k={k}, run_index={r}: {exc}") from exc
    try:
        out = simulate_batch(config, losses, split_randomness(config, u), batch=size)
    except Exception as exc:  # pragma: no cover - context wrapper
        raise ExperimentError(f"k={k}, run_index={chunk.start}..{chunk.stop - 1}: {exc}") from exc
    totals = losses.sum(axis=-1)
    if chunk.offset is None:
        regret = out.expected_total - totals.min(axis=-1)
    else:
        regret = out.expected_total - chunk.offset
    if chunk.best_mean_action is None:
        paired = np.full(size, np.nan)
    else:
        paired = out.expected_total - totals[..., chunk.best_mean_action]
    return regret, out.queries, out.incurred_total, paired


def chunk_size(n: int, T: int) -> int:
    return max(1, CHUNK_ELEMENTS // (n * T))


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def monte_carlo(plan: ExperimentPlan, parallelism: int = 1) -> RegretReport:
    """Estimate regret for every k in the plan's grid.

    Run ``r`` at budget ``k`` uses a generator seeded by (master_seed, k, r), so
    the report is identical for any ``parallelism``.
    """
    cells: list[tuple[int, InstanceSpec, LearnerConfig, list[_Chunk]]] = []
    skipped: dict[int, str] = {}
    B = chunk_size(plan.learner.n, plan.learner.T)
    for k in plan.k_grid:
        inst = plan.instance
        if isinstance(inst, LowerBoundFamily):
            try:
                inst = inst.at(k)
            except (InvalidInstanceError, ValueError) as exc:
                skipped[k] = str(exc)
                continue
        config = plan.learner.with_k(k)
        offset = _pseudo_offset(inst, config.T) if plan.benchmark == "best_mean_pseudo" else None
        best_mean = (instance_stats(inst).best_action
                     if isinstance(inst, _ANALYTIC) and inst.n <= MAX_ENUMERATION_ACTIONS else None)
        chunks = [
            _Chunk(inst, config, plan.master_seed, s, min(s + B, plan.runs), offset, best_mean)
            for s in range(0, plan.runs, B)
        ]
        cells.append((k, inst, config, chunks))

    flat = [c for cell in cells for c in cell[3]]
    if parallelism > 1 and len(flat) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_run_chunk, flat))
    else:
        results = [_run_chunk(c) for c in flat]

    rows = []
    pos = 0
    for k, inst, config, chunks in cells:
        part = results[pos:pos + len(chunks)]
        pos += len(chunks)
        regret = np.concatenate([p[0] for p in part])
        queries = np.concatenate([p[1] for p in part])
        loss = np.concatenate([p[2] for p in part])
        paired = np.concatenate([p[3] for p in part])
        mean, se = _mean_se(regret)
        mean_loss, loss_se = _mean_se(loss)
        paired_mean, paired_se = _mean_se(paired)
        bspec = BoundSpec(plan.bound_name, config.T, config.n, k)
        bval = theorem_bound(bspec)
        if bspec.is_lower_bound:
            ok = mean - plan.z * se >= bval.value
        else:
            ok = mean + plan.z * se <= bval.value
        rows.append(RegretRow(
            k=k,
            runs=int(regret.size),
            mean_regret=mean,
            std_error=se,
            bound_name=bspec.theorem,
            bound_value=bval.value,
            precondition_met=bval.precondition_met,
            bound_satisfied=bool(ok),
            mean_queries=float(queries.mean()),
            mean_loss=mean_loss,
            loss_std_error=loss_se,
            paired_pseudo_regret=paired_mean,
            paired_std_error=paired_se,
        ))
    return RegretReport(
        experiment_id=plan.experiment_id,
        algorithm=plan.learner.algorithm,
        feedback=plan.learner.feedback,
        T=plan.learner.T,
        n=plan.learner.n,
        benchmark=plan.benchmark,
        rows=rows,
        skipped=skipped,
    )


def fit_scaling_exponent(report: RegretReport, k_range: tuple[float, float]) -> tuple[float, float]:
    """Least-squares slope and r^2 of ln(mean regret) against ln(k) inside ``k_range``."""
    k_min, k_max = k_range
    pts = [(r.k, r.mean_regret) for r in report.rows if k_min <= r.k <= k_max]
    if len(pts) < 4:
        raise ValueError(f"need at least 4 grid points in [{k_min}, {k_max}], got {len(pts)}")
    bad = [k for k, m in pts if not m > 0.0]
    if bad:
        raise ValueError(f"mean regret is not positive at k={bad}; log undefined, increase runs")
    ks, ms = np.array(pts, dtype=np.float64).T
    fit = stats.linregress(np.log(ks), np.log(ms))
    return float(fit.slope), float(fit.rvalue**2)

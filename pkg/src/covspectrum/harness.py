"""Experiment orchestration: deterministic parallel sweeps and statistics.

A sweep runs a task set over a (p, n) grid with R replicates.  Each run
seeds its own stream from (master_seed, p, n, replicate) by avalanche
mixing, so results are independent of scheduling and thread count; the
persisted CSV is byte-identical across reruns.  Failures of individual
runs become error rows and never abort the sweep.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import reports
from .ensemble import (
    DataMatrix,
    DistributionSpec,
    MatrixShape,
    SeedSpec,
    distribution_from_json,
    moment_sequence,
    sample_matrix,
)
from .errors import ValidationError
from .momentlab import exact_trace_moment
from .normalize import (
    CovarianceSpec,
    NormalizationParams,
    build_A,
    build_A1,
    build_B,
    build_S1,
    build_S2,
    covariance_from_json,
    truncation_pipeline,
)
from .spectral import (
    DENSE_P_LIMIT,
    diag_max_dev,
    eigvals_sym,
    ks_distance,
    lambda_max_matfree,
    symmetric_operator_norm,
)

__all__ = [
    "TASK_NAMES",
    "TaskSpec",
    "ExperimentConfig",
    "RunRecord",
    "SummaryRow",
    "RateFit",
    "TailRow",
    "run_experiment",
    "summarize",
    "fit_rate",
    "tail_probability_report",
]

TASK_NAMES = (
    "lambda_max",
    "lambda_max_centered",
    "esd_ks",
    "diag_dev",
    "cov_rate",
    "truncation_report",
    "moment_check",
)

DEFAULT_TAIL_EPS = 0.3


@dataclass(frozen=True)
class TaskSpec:
    """One task of a sweep; cov_rate carries its Sigma, moment_check its k."""

    name: str
    sigma: CovarianceSpec | None = None
    k: int | None = None

    def __post_init__(self):
        if self.name not in TASK_NAMES:
            raise ValidationError(f"unknown task {self.name!r}")
        if self.name == "cov_rate" and self.sigma is None:
            raise ValidationError("cov_rate requires a covariance spec")
        if self.name == "moment_check" and (self.k is None or self.k < 1):
            raise ValidationError("moment_check requires k >= 1")

    @classmethod
    def from_json(cls, obj) -> "TaskSpec":
        if isinstance(obj, str):
            return cls(obj)
        if not isinstance(obj, dict) or "name" not in obj:
            raise ValidationError("task must be a name or a dict with 'name'")
        sigma = covariance_from_json(obj["sigma"]) if "sigma" in obj else None
        return cls(obj["name"], sigma=sigma, k=obj.get("k"))

    def to_json(self):
        if self.name == "cov_rate":
            return {"name": self.name, "sigma": self.sigma.to_json()}
        if self.name == "moment_check":
            return {"name": self.name, "k": self.k}
        return self.name


@dataclass(frozen=True)
class ExperimentConfig:
    distribution: DistributionSpec
    grid: tuple
    replicates: int
    master_seed: int
    tasks: tuple = ()
    output_dir: str | None = None

    def __post_init__(self):
        if len(self.grid) == 0:
            raise ValidationError("grid must be nonempty")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        names = [t.name for t in self.tasks]
        if len(names) != len(set(names)):
            raise ValidationError("duplicate task names would break record uniqueness")
        dense_only = {"esd_ks", "lambda_max_centered"}
        for task in self.tasks:
            if task.name in dense_only:
                bad = [s for s in self.grid if s.p > DENSE_P_LIMIT]
                if bad:
                    raise ValidationError(
                        f"task {task.name} needs dense spectra (p <= {DENSE_P_LIMIT})"
                    )

    @classmethod
    def from_json(cls, obj) -> "ExperimentConfig":
        try:
            grid = tuple(MatrixShape(int(p), int(n)) for p, n in obj["grid"])
            return cls(
                distribution=distribution_from_json(obj["distribution"]),
                grid=grid,
                replicates=int(obj.get("replicates", 1)),
                master_seed=int(obj.get("master_seed", 0)),
                tasks=tuple(TaskSpec.from_json(t) for t in obj.get("tasks", ())),
                output_dir=obj.get("output_dir"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed experiment config: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "distribution": self.distribution.to_json(),
            "grid": [[s.p, s.n] for s in self.grid],
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "tasks": [t.to_json() for t in self.tasks],
            "output_dir": self.output_dir,
        }


@dataclass
class RunRecord:
    """One measurement row; (p, n, replicate, task) is unique per sweep."""

    p: int
    n: int
    ratio: float
    replicate: int
    task: str
    value: float
    aux: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return "error" in self.aux

    def sort_key(self):
        return (self.p, self.n, self.replicate, self.task)


def _run_tasks(config: ExperimentConfig, shape: MatrixShape, replicate: int) -> list:
    X = sample_matrix(config.distribution, shape, SeedSpec(config.master_seed), replicate)
    ratio = shape.p / shape.n
    records = []
    for task in config.tasks:
        start = time.perf_counter()
        try:
            value, aux = _execute_task(task, X, config.distribution)
        except Exception as exc:  # error rows must never abort the sweep
            value, aux = math.nan, {"error": f"{type(exc).__name__}: {exc}"}
        aux["wall_ms"] = (time.perf_counter() - start) * 1000.0
        records.append(
            RunRecord(
                p=shape.p,
                n=shape.n,
                ratio=ratio,
                replicate=replicate,
                task=task.name,
                value=value,
                aux=aux,
            )
        )
    return records


def _execute_task(task: TaskSpec, X: DataMatrix, dist: DistributionSpec):
    name = task.name
    if name == "lambda_max":
        if X.p <= DENSE_P_LIMIT:
            A = build_A(X)
            lam = float(eigvals_sym(A)[-1])
            np.fill_diagonal(A, 0.0)
            lam_b = float(eigvals_sym(A)[-1])
            return lam, {"method": "dense", "lambda_max_b": lam_b}
        lam, iters = lambda_max_matfree(X)
        return lam, {"method": "matfree", "iterations": iters}
    if name == "lambda_max_centered":
        return float(eigvals_sym(build_A1(X))[-1]), {"method": "dense"}
    if name == "esd_ks":
        eigs = eigvals_sym(build_A(X))
        return float(ks_distance(eigs)), {"lambda_max": float(eigs[-1])}
    if name == "diag_dev":
        return float(diag_max_dev(X)), {}
    if name == "cov_rate":
        sigma = task.sigma.materialize(X.p)
        err = symmetric_operator_norm(build_S2(X, task.sigma) - sigma)
        sigma_norm = symmetric_operator_norm(sigma)
        s1_dev = symmetric_operator_norm(build_S1(X) - np.eye(X.p))
        return float(err), {"bound": float(s1_dev * sigma_norm), "sigma_norm": float(sigma_norm)}
    if name == "truncation_report":
        _, report = truncation_pipeline(X, NormalizationParams(), spec=dist)
        return float(report.fraction_truncated), {
            "threshold": report.threshold,
            "post_mean": report.post_mean,
            "post_sigma2": report.post_sigma2,
        }
    # moment_check
    moments = moment_sequence(dist, 2 * task.k)
    return float(exact_trace_moment(X.p, X.n, task.k, moments)), {"k": task.k}


def run_experiment(config: ExperimentConfig, threads: int = 0, out_dir: str | None = None) -> list:
    """Execute every (shape, replicate, task); persist a canonical CSV.

    threads = 0 picks the CPU count; any thread count yields identical
    records because each run is a pure function of its derived seed and
    aggregation sorts by (p, n, replicate, task).
    """
    jobs = [(shape, rep) for shape in config.grid for rep in range(config.replicates)]
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads == 1 or len(jobs) <= 1:
        nested = [_run_tasks(config, shape, rep) for shape, rep in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            nested = list(pool.map(lambda job: _run_tasks(config, *job), jobs))
    records = [rec for batch in nested for rec in batch]
    records.sort(key=RunRecord.sort_key)
    target = out_dir if out_dir is not None else config.output_dir
    if target is not None:
        os.makedirs(target, exist_ok=True)
        reports.records_to_csv(records, os.path.join(target, "records.csv"))
    return records


# ---------------------------------------------------------------------------
# Statistics over records.


@dataclass(frozen=True)
class SummaryRow:
    p: int
    n: int
    task: str
    count: int
    median: float
    mean: float
    std: float
    minimum: float
    maximum: float


def _lower_median(sorted_values):
    return sorted_values[(len(sorted_values) - 1) // 2]


def summarize(records) -> list:
    """Per-(p, n, task) order statistics; error rows are excluded.

    The median is the lower median for even counts, so it is always an
    observed value.
    """
    if not records:
        raise ValidationError("no records to summarize")
    groups = {}
    for rec in records:
        if rec.failed or not math.isfinite(rec.value):
            continue
        groups.setdefault((rec.p, rec.n, rec.task), []).append(rec.value)
    rows = []
    for (p, n, task), values in sorted(groups.items()):
        values.sort()
        arr = np.asarray(values)
        rows.append(
            SummaryRow(
                p=p,
                n=n,
                task=task,
                count=len(values),
                median=float(_lower_median(values)),
                mean=float(arr.mean()),
                std=float(arr.std(ddof=1)) if len(values) > 1 else 0.0,
                minimum=float(values[0]),
                maximum=float(values[-1]),
            )
        )
    return rows


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of log(median error) against log(p/n)."""

    slope: float
    intercept: float
    r2: float
    points: tuple


def fit_rate(records) -> RateFit:
    """Fit the covariance-error rate; needs >= 3 distinct grid ratios."""
    groups = {}
    for rec in records:
        if rec.task != "cov_rate" or rec.failed or not math.isfinite(rec.value):
            continue
        groups.setdefault((rec.p, rec.n), []).append(rec.value)
    if len({p / n for p, n in groups}) < 3:
        raise ValidationError("rate fit needs at least 3 distinct p/n ratios")
    points = []
    for (p, n), values in groups.items():
        values.sort()
        points.append((math.log(p / n), math.log(_lower_median(values))))
    points.sort()
    x = np.array([a for a, _ in points])
    y = np.array([b for _, b in points])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return RateFit(slope=float(slope), intercept=float(intercept), r2=r2, points=tuple(points))


@dataclass(frozen=True)
class TailRow:
    p: int
    n: int
    ratio: float
    exceed: int
    total: int
    frequency: float
    wilson_low: float
    wilson_high: float


def _wilson(successes: int, total: int, z: float = 1.96):
    if total == 0:
        return 0.0, 1.0
    phat = successes / total
    denom = 1.0 + z * z / total
    center = (phat + z * z / (2 * total)) / denom
    half = z * math.sqrt(phat * (1 - phat) / total + z * z / (4 * total * total)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def tail_probability_report(records, eps: float = DEFAULT_TAIL_EPS) -> list:
    """Empirical frequency of {lambda_max(B) > 1 + eps} with Wilson intervals.

    Consumes lambda_max records (dense runs carry lambda_max_b in aux);
    rows come back sorted by decreasing ratio, so the frequency column
    should read nonincreasing when the tail event thins out.
    """
    groups = {}
    for rec in records:
        if rec.task != "lambda_max" or rec.failed or "lambda_max_b" not in rec.aux:
            continue
        groups.setdefault((rec.p, rec.n), []).append(float(rec.aux["lambda_max_b"]))
    rows = []
    for (p, n), values in groups.items():
        exceed = sum(1 for v in values if v > 1.0 + eps)
        low, high = _wilson(exceed, len(values))
        rows.append(
            TailRow(
                p=p,
                n=n,
                ratio=p / n,
                exceed=exceed,
                total=len(values),
                frequency=exceed / len(values),
                wilson_low=low,
                wilson_high=high,
            )
        )
    rows.sort(key=lambda r: -r.ratio)
    return rows

"""Trajectory recording, theorem-style harness reports, and CSV export.

A trajectory is the per-step log of one run: task losses, both weight
vectors, the latest alignment scores, the learning rate and the
gradient-evaluation counters.  On top of it live two empirical checks:

* ``convergence_report`` tracks the running minimum of the worst-task
  suboptimality against a known minimax optimum and fits its decay rate;
* ``variance_monotonicity_check`` looks for a burn-in point after which
  the across-task loss variance never increases.

Export is a plain CSV with stable column names; floats are written with
``repr`` (shortest round-trip decimal), so a re-ingested file reproduces
every value exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IngestError, ReportError
from .simplex import SIMPLEX_TOL

VARIANCE_TOL = 1e-12


@dataclass(frozen=True)
class TrajectoryRecord:
    """State snapshot after one training step."""

    step: int
    losses: np.ndarray
    alpha: np.ndarray
    z: np.ndarray
    task_scores: np.ndarray
    domain_scores: np.ndarray
    lr: float
    train_grad_evals: int
    task_grad_evals: int
    domain_grad_evals: int
    param_version: int

    def __post_init__(self):
        for name in ("losses", "alpha", "z", "task_scores", "domain_scores"):
            value = np.array(getattr(self, name), dtype=np.float64, copy=True)
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def grad_evals(self) -> int:
        return self.train_grad_evals + self.task_grad_evals + self.domain_grad_evals


class Trajectory:
    """An append-only, single-writer sequence of records for one run."""

    def __init__(self, domain_labels, task_labels):
        self.domain_labels = tuple(domain_labels)
        self.task_labels = tuple(task_labels)
        self.records: list[TrajectoryRecord] = []

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TrajectoryRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"steps must strictly increase, got {record.step} after {self.records[-1].step}")
        for name, expect in (
            ("losses", len(self.task_labels)),
            ("z", len(self.task_labels)),
            ("task_scores", len(self.task_labels)),
            ("alpha", len(self.domain_labels)),
            ("domain_scores", len(self.domain_labels)),
        ):
            if getattr(record, name).shape != (expect,):
                raise ValueError(f"record field {name} has wrong length")
        for name in ("alpha", "z"):
            vec = getattr(record, name)
            if np.any(vec < 0.0) or abs(float(vec.sum()) - 1.0) > SIMPLEX_TOL:
                raise ValueError(f"record field {name} is not a valid simplex vector")
        self.records.append(record)

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.losses for r in self.records])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([r.alpha for r in self.records])

    @property
    def zs(self) -> np.ndarray:
        return np.array([r.z for r in self.records])

    @property
    def final_counters(self) -> tuple[int, int, int]:
        if not self.records:
            return (0, 0, 0)
        last = self.records[-1]
        return (last.train_grad_evals, last.task_grad_evals, last.domain_grad_evals)


def task_variance(losses) -> float:
    """Population variance (divide by N) of the per-task losses."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size < 1:
        raise ValueError("need at least one task loss")
    return float(np.var(losses))


def variance_series(trajectory: Trajectory) -> np.ndarray:
    return np.array([task_variance(r.losses) for r in trajectory.records])


@dataclass(frozen=True)
class VarianceCheck:
    """Outcome of the variance-monotonicity search."""

    found: bool
    t0: int | None
    max_increase: float


def variance_monotonicity_check(
    trajectory: Trajectory,
    burn_in_fraction: float,
    tol: float = VARIANCE_TOL,
) -> VarianceCheck:
    """Find the earliest recorded step within the burn-in window after
    which the task-loss variance never increases by more than ``tol``.

    Meant for deterministic (full-batch) trajectories, where monotone
    means monotone; on a stochastic trajectory the check simply fails
    and reports the violation rather than erroring.  ``max_increase`` is
    the largest post-t0 increase when found, or the smallest achievable
    violation over candidate starting points when not.
    """
    if not trajectory.records:
        raise ReportError("trajectory has no records")
    steps = trajectory.steps
    variances = variance_series(trajectory)
    diffs = np.diff(variances)
    horizon = burn_in_fraction * steps[-1]
    candidates = np.flatnonzero(steps <= horizon)
    if candidates.size == 0:
        candidates = np.array([0])
    # suffix_max[i] = largest later increase if t0 were placed at record i
    suffix_max = np.full(len(steps), -np.inf)
    if diffs.size:
        suffix_max[:-1] = np.maximum.accumulate(diffs[::-1])[::-1]
    for i in candidates:
        if suffix_max[i] <= tol:
            return VarianceCheck(found=True, t0=int(steps[i]), max_increase=max(float(suffix_max[i]), 0.0))
    best = float(suffix_max[candidates].min())
    return VarianceCheck(found=False, t0=None, max_increase=best)


@dataclass(frozen=True)
class TheoremHarnessReport:
    """Empirical convergence and variance evidence from one trajectory."""

    steps: np.ndarray
    suboptimality: np.ndarray
    running_min: np.ndarray
    variance: np.ndarray
    epsilon: float
    first_step_within_epsilon: int | None
    fit_slope: float
    fit_intercept: float
    fit_r2: float
    variance_check: VarianceCheck = field(repr=False)

    @property
    def t0(self) -> int | None:
        return self.variance_check.t0


def convergence_report(
    trajectory: Trajectory,
    true_opt: float,
    epsilon: float = 1e-3,
    burn_in_fraction: float = 0.2,
) -> TheoremHarnessReport:
    """Measure worst-task suboptimality against a known minimax optimum.

    Reports the raw and running-minimum suboptimality series, the first
    recorded step with running minimum <= epsilon, and a least-squares
    fit of log(running min) against log(step) over the final half of the
    run (slope near -1 is the signature of a 1/t decay; steeper is
    faster).
    """
    if not trajectory.records:
        raise ReportError("trajectory has no records")
    for r in trajectory.records:
        if r.losses.shape != (len(trajectory.task_labels),) or not np.all(np.isfinite(r.losses)):
            raise ReportError(f"record at step {r.step} lacks usable task losses")

    steps = trajectory.steps
    worst = trajectory.losses.max(axis=1)
    subopt = worst - true_opt
    running_min = np.minimum.accumulate(subopt)

    hit = np.flatnonzero(running_min <= epsilon)
    first_step = int(steps[hit[0]]) if hit.size else None

    tail = (steps >= steps[-1] / 2) & (steps > 0)
    slope, intercept, r2 = _loglog_fit(steps[tail], running_min[tail])

    return TheoremHarnessReport(
        steps=steps,
        suboptimality=subopt,
        running_min=running_min,
        variance=variance_series(trajectory),
        epsilon=epsilon,
        first_step_within_epsilon=first_step,
        fit_slope=slope,
        fit_intercept=intercept,
        fit_r2=r2,
        variance_check=variance_monotonicity_check(trajectory, burn_in_fraction),
    )


def _loglog_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    if x.size < 2:
        return (float("nan"), float("nan"), float("nan"))
    log_x = np.log(x.astype(np.float64))
    log_y = np.log(np.maximum(y, 1e-300))
    slope, intercept = np.polyfit(log_x, log_y, 1)
    predicted = slope * log_x + intercept
    total = float(((log_y - log_y.mean()) ** 2).sum())
    resid = float(((log_y - predicted) ** 2).sum())
    r2 = 1.0 - resid / total if total > 0 else 1.0
    return float(slope), float(intercept), r2


# ---------------------------------------------------------------------------
# CSV export / import
# ---------------------------------------------------------------------------


def _header(domain_labels, task_labels) -> list[str]:
    return (
        ["step"]
        + [f"loss.{t}" for t in task_labels]
        + [f"alpha.{d}" for d in domain_labels]
        + [f"z.{t}" for t in task_labels]
        + [f"a_task.{t}" for t in task_labels]
        + [f"a_domain.{d}" for d in domain_labels]
        + ["lr", "grad_evals"]
    )


def render_trajectory(trajectory: Trajectory) -> str:
    """The CSV text of a trajectory; floats as shortest round-trip decimals."""
    lines = [",".join(_header(trajectory.domain_labels, trajectory.task_labels))]
    for r in trajectory.records:
        fields = (
            [str(r.step)]
            + [repr(float(v)) for v in r.losses]
            + [repr(float(v)) for v in r.alpha]
            + [repr(float(v)) for v in r.z]
            + [repr(float(v)) for v in r.task_scores]
            + [repr(float(v)) for v in r.domain_scores]
            + [repr(float(r.lr)), str(r.grad_evals)]
        )
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def export_trajectory(trajectory: Trajectory, path: str | Path) -> None:
    """Write one CSV row per record (see render_trajectory)."""
    Path(path).write_text(render_trajectory(trajectory), encoding="utf-8")


def import_trajectory(path: str | Path) -> Trajectory:
    """Re-ingest an exported trajectory.

    Labels are recovered from the header.  The three-way split of the
    gradient-evaluation counter is not part of the format; the total is
    restored into the training counter.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise IngestError("trajectory file is empty", 1)
    columns = lines[0].split(",")
    task_labels = [c[len("loss.") :] for c in columns if c.startswith("loss.")]
    domain_labels = [c[len("alpha.") :] for c in columns if c.startswith("alpha.")]
    if not task_labels or not domain_labels:
        raise IngestError("header lacks loss.* / alpha.* columns", 1)
    if columns != _header(domain_labels, task_labels):
        raise IngestError("header does not match the trajectory schema", 1)

    n, k = len(task_labels), len(domain_labels)
    trajectory = Trajectory(domain_labels, task_labels)
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(columns):
            raise IngestError(f"expected {len(columns)} fields, got {len(parts)}", lineno)
        try:
            values = [float(p) for p in parts[1:-1]]
            step = int(parts[0])
            evals = int(parts[-1])
        except ValueError as exc:
            raise IngestError(str(exc), lineno) from exc
        pos = 0
        take = lambda count: np.array(values[pos : pos + count])  # noqa: E731
        losses = take(n); pos += n
        alpha = take(k); pos += k
        z = take(n); pos += n
        a_task = take(n); pos += n
        a_domain = take(k); pos += k
        lr = values[pos]
        trajectory.append(
            TrajectoryRecord(
                step=step,
                losses=losses,
                alpha=alpha,
                z=z,
                task_scores=a_task,
                domain_scores=a_domain,
                lr=lr,
                train_grad_evals=evals,
                task_grad_evals=0,
                domain_grad_evals=0,
                param_version=step,
            )
        )
    return trajectory

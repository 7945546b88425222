"""Probability-simplex weight vectors and exponentiated-gradient updates.

The reweighting algorithms in this package maintain two probability
vectors: sampling weights over source domains and priority weights over
target tasks.  Both are updated multiplicatively,

    w'_i  propto  w_i * exp(+/- step_ratio * score_i),

followed by renormalization, which is the closed-form solution of an
entropy-regularized linear objective on the simplex (online mirror
descent with the KL divergence as the proximity term).  Updates are
computed in log space with max-subtraction so that large
``step_ratio * score`` products never overflow, and so that adding a
constant to every score leaves the result unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateWeights, DimensionError, DivergenceUndefined, ScoreError

SIMPLEX_TOL = 1e-9

ASCEND = "ascend"
DESCEND = "descend"


def _as_labels(labels: Sequence[str] | None, m: int) -> tuple[str, ...]:
    if labels is None:
        return tuple(f"w{i}" for i in range(m))
    labels = tuple(str(x) for x in labels)
    if len(labels) != m:
        raise DimensionError(f"{len(labels)} labels for {m} weights")
    if len(set(labels)) != m:
        raise DimensionError("weight labels must be unique")
    return labels


@dataclass(frozen=True)
class SimplexWeights:
    """An immutable probability vector with one label per entry.

    Entries are nonnegative and sum to 1 within ``SIMPLEX_TOL``.  Updates
    return new instances; instances are safe to share across threads.
    """

    values: np.ndarray
    labels: tuple[str, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1 or values.size < 1:
            raise DimensionError("weights must be a nonempty 1-D vector")
        if not np.all(np.isfinite(values)):
            raise DegenerateWeights("weights contain NaN or Inf")
        if np.any(values < 0.0):
            raise DegenerateWeights("weights contain negative entries")
        if abs(float(values.sum()) - 1.0) > SIMPLEX_TOL:
            raise DegenerateWeights(f"weights sum to {values.sum()!r}, not 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", _as_labels(self.labels, values.size))

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])

    @classmethod
    def uniform(cls, labels: Sequence[str] | int) -> "SimplexWeights":
        if isinstance(labels, int):
            labels = [f"w{i}" for i in range(labels)]
        m = len(labels)
        return cls(np.full(m, 1.0 / m), tuple(labels))

    def to_record(self) -> dict:
        """Plain-data form used for warm starts and exports."""
        return {"labels": list(self.labels), "values": [float(v) for v in self.values]}

    @classmethod
    def from_record(cls, record: dict) -> "SimplexWeights":
        return cls(np.asarray(record["values"], dtype=np.float64), tuple(record["labels"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_record(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SimplexWeights":
        return cls.from_record(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class UpdateParams:
    """Step size and sign of a multiplicative update.

    ``step_ratio`` is the ratio of the current learning rate to the
    entropic regularization coefficient of the relevant simplex.  A zero
    ratio degenerates to the identity (useful for ablations); negative
    ratios are rejected.
    """

    step_ratio: float
    direction: str = DESCEND

    def __post_init__(self):
        if not np.isfinite(self.step_ratio) or self.step_ratio < 0.0:
            raise ValueError(f"step_ratio must be finite and >= 0, got {self.step_ratio!r}")
        if self.direction not in (ASCEND, DESCEND):
            raise ValueError(f"direction must be {ASCEND!r} or {DESCEND!r}")


def normalize(raw: Sequence[float] | np.ndarray, labels: Sequence[str] | None = None) -> SimplexWeights:
    """Scale a nonnegative vector to sum to 1.

    Raises DegenerateWeights if the input has no positive mass or any
    non-finite entry.
    """
    values = np.asarray(raw, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise DimensionError("expected a nonempty 1-D vector")
    if not np.all(np.isfinite(values)):
        raise DegenerateWeights("cannot normalize: non-finite entries")
    if np.any(values < 0.0):
        raise DegenerateWeights("cannot normalize: negative entries")
    total = float(values.sum())
    if total <= 0.0:
        raise DegenerateWeights("cannot normalize: all entries are zero")
    return SimplexWeights(values / total, None if labels is None else tuple(labels))


def multiplicative_update(
    w: SimplexWeights,
    scores: Sequence[float] | np.ndarray,
    params: UpdateParams,
    floor: float = 0.0,
) -> SimplexWeights:
    """Exponentiated-gradient step on the simplex.

    Computes ``w_i * exp(sign * step_ratio * score_i)`` and renormalizes,
    where sign is +1 for ``ascend`` and -1 for ``descend``.  Evaluated in
    log space with max-subtraction: invariant (to ~1e-12) under adding a
    constant to all scores, and overflow-free for any score magnitude.

    Entries that are exactly zero stay zero (a dead entry can never
    revive under a multiplicative update).  An optional ``floor`` clamps
    every entry up to that value after the update and renormalizes; the
    default of 0 applies no floor.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != w.values.shape:
        raise DimensionError(f"scores shape {s.shape} != weights shape {w.values.shape}")
    if not np.all(np.isfinite(s)):
        raise ScoreError("scores contain NaN or Inf")

    if params.step_ratio == 0.0:
        updated = w.values
    else:
        sign = 1.0 if params.direction == ASCEND else -1.0
        with np.errstate(divide="ignore"):  # log(0) -> -inf keeps dead entries dead
            arg = np.log(w.values) + sign * params.step_ratio * s
        shifted = np.exp(arg - np.max(arg))
        total = float(shifted.sum())
        if not np.isfinite(total) or total <= 0.0:
            raise DegenerateWeights("update produced no positive mass")
        updated = shifted / total

    if floor > 0.0:
        updated = np.maximum(updated, floor)
    return normalize(updated, w.labels)


def bregman_entropy_divergence(p: SimplexWeights, q: SimplexWeights) -> float:
    """KL-type divergence sum_i p_i log(p_i / q_i), with 0 log(0/q) = 0.

    This is the Bregman divergence generated by negative entropy,
    restricted to the simplex; it regularizes how far one update may move
    the weights.  Raises DivergenceUndefined when p puts mass where q has
    none.
    """
    if p.values.shape != q.values.shape:
        raise DimensionError("p and q must have the same length")
    pv, qv = p.values, q.values
    support = pv > 0.0
    if np.any(qv[support] == 0.0):
        raise DivergenceUndefined("p has mass where q is zero")
    return float(np.sum(pv[support] * np.log(pv[support] / qv[support])))

"""Domain/task dataset stores, categorical mixture sampling, synthetic corpora.

The data layer is deliberately dumb: datasets are immutable in-memory
lists of examples, sampling is i.i.d. with replacement (importance
sampling semantics, no epoch bookkeeping), and every random draw comes
from a named stream so that toggling one consumer (say, gradient-surgery
ordering) never perturbs another's sequence.  Given (seed, config) the
entire layer reproduces bit-identical batches.
"""

from __future__ import annotations

import hashlib
import json
import math
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyBatch,
    EmptyDataset,
    IngestError,
    SpecError,
)
from .simplex import SimplexWeights

ROW_SUM_TOL = 1e-9

# Example types, by model:
#   char-level LM  -> str
#   softmax classifier -> (features: np.ndarray, label: int)
#   quadratic family   -> QuadraticExample (see models.py)
Batch = list


class Dataset:
    """An immutable, indexed collection of examples."""

    def __init__(self, examples: Sequence):
        examples = list(examples)
        if not examples:
            raise EmptyDataset("dataset has no examples")
        self._examples = examples

    def __len__(self) -> int:
        return len(self._examples)

    def __getitem__(self, i: int):
        return self._examples[i]

    def __iter__(self) -> Iterator:
        return iter(self._examples)

    @property
    def examples(self) -> list:
        return list(self._examples)


class MixtureStore:
    """K named source-domain datasets plus N named target-task datasets.

    Domain and task label sets must be disjoint so that a weight vector's
    labels identify unambiguously which side it addresses.
    """

    def __init__(self, domains: Mapping[str, Dataset], tasks: Mapping[str, Dataset]):
        if not domains or not tasks:
            raise EmptyDataset("store needs at least one domain and one task")
        overlap = set(domains) & set(tasks)
        if overlap:
            raise DimensionError(f"domain and task labels overlap: {sorted(overlap)}")
        self.domains = dict(domains)
        self.tasks = dict(tasks)
        self.domain_labels = tuple(self.domains)
        self.task_labels = tuple(self.tasks)

    @property
    def num_domains(self) -> int:
        return len(self.domains)

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)


class SeededSampler:
    """Named, independent RNG streams derived from a single 64-bit seed.

    ``stream(name)`` returns the same generator instance on every call,
    so each consumer owns one sequence; identical (seed, name, call
    sequence) always reproduces identical draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = stream_rng(self.seed, name)
        return self._streams[name]


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """A fresh generator for (seed, stream), stable across runs and platforms."""
    digest = hashlib.sha256(stream.encode("utf-8")).digest()
    stream_key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), stream_key]))


def _uniform_indices(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    # floor(u * n) keeps the draw count independent of n
    return np.minimum((rng.random(size) * n).astype(np.int64), n - 1)


def sample_mixture_batch(
    store: MixtureStore,
    w: SimplexWeights,
    size: int,
    rng: np.random.Generator,
    side: str | None = None,
) -> Batch:
    """Draw ``size`` examples, each from a dataset chosen by categorical(w).

    ``w.labels`` must match either the store's domain labels or its task
    labels; ``side`` ("domains" / "tasks") can force the choice.  Sampling
    is per example, not per batch, so the batch composition itself is a
    draw from the mixture.
    """
    if side is None:
        if w.labels == store.domain_labels:
            side = "domains"
        elif w.labels == store.task_labels:
            side = "tasks"
        else:
            raise DimensionError("weight labels match neither domains nor tasks")
    datasets = [getattr(store, side)[label] for label in w.labels]
    if size < 1:
        raise EmptyBatch(f"batch size must be >= 1, got {size}")
    cum = np.cumsum(w.values)
    which = np.minimum(np.searchsorted(cum, rng.random(size), side="right"), len(datasets) - 1)
    picks = rng.random(size)
    batch = []
    for ds_idx, u in zip(which, picks):
        ds = datasets[ds_idx]
        batch.append(ds[min(int(u * len(ds)), len(ds) - 1)])
    return batch


def sample_domain_batches(store: MixtureStore, size: int, rng: np.random.Generator) -> list[Batch]:
    """One uniformly drawn batch from every domain, in label order."""
    return [_uniform_batch(store.domains[lbl], size, rng) for lbl in store.domain_labels]


def sample_task_batches(store: MixtureStore, size: int, rng: np.random.Generator) -> list[Batch]:
    """One uniformly drawn batch from every task, in label order."""
    return [_uniform_batch(store.tasks[lbl], size, rng) for lbl in store.task_labels]


def _uniform_batch(dataset: Dataset, size: int, rng: np.random.Generator) -> Batch:
    if size < 1:
        raise EmptyBatch(f"batch size must be >= 1, got {size}")
    return [dataset[i] for i in _uniform_indices(rng, len(dataset), size)]


# ---------------------------------------------------------------------------
# Synthetic character-level languages (first-order Markov chains)
# ---------------------------------------------------------------------------

_ALPHABET = string.ascii_lowercase + string.digits


@dataclass(frozen=True)
class MarkovLanguageSpec:
    """A synthetic 'language': a row-stochastic transition matrix over V chars."""

    vocab_size: int
    transition: np.ndarray

    def __post_init__(self):
        trans = np.array(self.transition, dtype=np.float64, copy=True)
        if trans.shape != (self.vocab_size, self.vocab_size):
            raise SpecError(f"transition must be {self.vocab_size}x{self.vocab_size}, got {trans.shape}")
        if self.vocab_size > len(_ALPHABET):
            raise SpecError(f"vocab_size above {len(_ALPHABET)} is not supported")
        if np.any(trans < 0.0) or not np.all(np.isfinite(trans)):
            raise SpecError("transition entries must be finite and >= 0")
        if np.max(np.abs(trans.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
            raise SpecError("transition rows must sum to 1")
        trans.flags.writeable = False
        object.__setattr__(self, "transition", trans)

    @property
    def vocab(self) -> str:
        return _ALPHABET[: self.vocab_size]

    @classmethod
    def interpolate(cls, specs: Sequence["MarkovLanguageSpec"], coeffs: Sequence[float]) -> "MarkovLanguageSpec":
        """A related language whose transitions are a convex mix of others'."""
        if len(specs) != len(coeffs) or not specs:
            raise SpecError("need one coefficient per source language")
        c = np.asarray(coeffs, dtype=np.float64)
        if np.any(c < 0.0) or c.sum() <= 0.0:
            raise SpecError("interpolation coefficients must be nonnegative with positive sum")
        c = c / c.sum()
        v = specs[0].vocab_size
        if any(sp.vocab_size != v for sp in specs):
            raise SpecError("all source languages must share one vocabulary size")
        mixed = sum(ci * sp.transition for ci, sp in zip(c, specs))
        return cls(v, mixed)


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """The stationary distribution pi with pi @ P = pi, sum(pi) = 1."""
    trans = np.asarray(transition, dtype=np.float64)
    v = trans.shape[0]
    a = np.vstack([trans.T - np.eye(v), np.ones((1, v))])
    b = np.zeros(v + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.maximum(pi, 0.0)
    return pi / pi.sum()


def chain_cross_entropy(spec: MarkovLanguageSpec, model_probs: np.ndarray) -> float:
    """Expected per-transition NLL of chain text under given bigram probabilities.

    With model_probs equal to the chain's own transitions this is the
    entropy rate, i.e. the best any bigram model can do on that language.
    """
    q = np.asarray(model_probs, dtype=np.float64)
    pi = stationary_distribution(spec.transition)
    p = spec.transition
    mask = p > 0.0
    if np.any(q[mask] <= 0.0):
        return float("inf")
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * np.log(q[mask])
    return float(-(pi[:, None] * terms).sum())


def chain_entropy_rate(spec: MarkovLanguageSpec) -> float:
    """Per-transition entropy of the chain: the optimal bigram NLL on it."""
    return chain_cross_entropy(spec, spec.transition)


def generate_markov_corpus(
    spec: MarkovLanguageSpec,
    length: int,
    rng: np.random.Generator,
    seq_len: int = 64,
) -> Dataset:
    """Sample roughly ``length`` characters from the chain as fixed-size chunks.

    Each chunk is an independent walk started from the stationary
    distribution, so empirical bigram frequencies converge to the spec's
    transitions as the corpus grows.
    """
    if length < 2:
        raise ValueError(f"corpus length must be >= 2, got {length}")
    seq_len = min(seq_len, length)
    n_chunks = max(1, math.ceil(length / seq_len))
    v = spec.vocab_size

    pi_cum = np.cumsum(stationary_distribution(spec.transition))
    trans_cum = np.cumsum(spec.transition, axis=1)
    states = np.empty((n_chunks, seq_len), dtype=np.int64)
    states[:, 0] = np.minimum(np.searchsorted(pi_cum, rng.random(n_chunks), side="right"), v - 1)
    for t in range(1, seq_len):
        u = rng.random(n_chunks)
        rows = trans_cum[states[:, t - 1]]
        states[:, t] = np.minimum((u[:, None] > rows).sum(axis=1), v - 1)

    chars = np.frombuffer(spec.vocab.encode("ascii"), dtype=np.uint8)
    return Dataset([bytes(chars[row]).decode("ascii") for row in states])


# ---------------------------------------------------------------------------
# File ingestion: UTF-8 line-delimited JSON records
# ---------------------------------------------------------------------------


def ingest_dataset(path: str | Path) -> Dataset:
    """Load a line-delimited dataset file, preserving record order.

    Each line is a JSON object: either ``{"text": "..."}`` or
    ``{"x": [numbers], "y": number-or-list}``.  Malformed lines raise
    IngestError with the 1-based line number; a file with no records
    raises EmptyDataset.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"invalid JSON ({exc.msg})", lineno) from exc
            if not isinstance(record, dict):
                raise IngestError("record is not an object", lineno)
            if "text" in record:
                if not isinstance(record["text"], str):
                    raise IngestError("'text' must be a string", lineno)
                examples.append(record["text"])
            elif "x" in record and "y" in record:
                try:
                    x = np.asarray(record["x"], dtype=np.float64)
                    y = record["y"]
                    if isinstance(y, list):
                        y = np.asarray(y, dtype=np.float64)
                    else:
                        y = float(y)
                except (TypeError, ValueError) as exc:
                    raise IngestError(f"bad feature record: {exc}", lineno) from exc
                examples.append((x, y))
            else:
                raise IngestError("record needs 'text' or 'x'/'y' fields", lineno)
    if not examples:
        raise EmptyDataset(f"{path}: no records")
    return Dataset(examples)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Inverse of ingest_dataset: one JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in dataset:
            if isinstance(ex, str):
                fh.write(json.dumps({"text": ex}) + "\n")
            else:
                x, y = ex
                y_out = y.tolist() if isinstance(y, np.ndarray) else y
                fh.write(json.dumps({"x": np.asarray(x).tolist(), "y": y_out}) + "\n")

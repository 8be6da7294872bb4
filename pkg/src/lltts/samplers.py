"""Batch construction: random, weighted, language-balanced, and dual."""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, UsageError


class Provenance(enum.Enum):
    RANDOM = "random"
    WEIGHTED = "weighted"
    LBS = "lbs"
    RRS = "rrs"


@dataclass
class Batch:
    samples: list
    provenance: Provenance
    language_histogram: dict = field(default=None)

    def __post_init__(self):
        if not self.samples:
            raise UsageError("batch must be non-empty")
        if self.language_histogram is None:
            self.language_histogram = dict(Counter(s.language_id for s in self.samples))

    def __len__(self):
        return len(self.samples)


@dataclass
class SampleWeightTable:
    weights: np.ndarray
    language_counts: dict


def build_weight_table(ds) -> SampleWeightTable:
    """Per-sample weight |D+| / C_lang (reciprocal language frequency)."""
    if len(ds) == 0:
        raise UsageError("dataset is empty")
    total = len(ds)
    counts = ds.language_counts
    if any(c <= 0 for c in counts.values()):
        raise ConsistencyError("zero language count in replay dataset")
    weights = np.array([total / counts[s.language_id] for s in ds.samples])
    return SampleWeightTable(weights, dict(counts))


def draw_random(ds, batch_size: int, rng, provenance: Provenance = Provenance.RANDOM) -> Batch:
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    if len(ds) == 0:
        raise UsageError("cannot sample from an empty dataset")
    idx = rng.integers(0, len(ds), size=batch_size)
    return Batch([ds.samples[i] for i in idx], provenance)


def draw_weighted(table: SampleWeightTable, ds, batch_size: int, rng) -> Batch:
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    if len(table.weights) != len(ds):
        raise UsageError("weight table does not match dataset")
    p = table.weights / table.weights.sum()
    idx = rng.choice(len(ds), size=batch_size, replace=True, p=p)
    return Batch([ds.samples[i] for i in idx], Provenance.WEIGHTED)


def draw_balanced(ds, batch_size: int, rng) -> Batch:
    """Equal per-language counts (remainder spread at random), uniform
    with replacement within each language."""
    groups = ds.by_language()
    langs = sorted(groups)
    k = len(langs)
    if batch_size < k:
        raise UsageError(f"batch_size {batch_size} < number of languages {k}")
    base, rem = divmod(batch_size, k)
    quota = {lang: base for lang in langs}
    if rem:
        for j in rng.choice(k, size=rem, replace=False):
            quota[langs[j]] += 1
    samples = []
    for lang in langs:
        pool = groups[lang]
        idx = rng.integers(0, len(pool), size=quota[lang])
        samples.extend(ds.samples[pool[i]] for i in idx)
    return Batch(samples, Provenance.LBS)


def draw_dual(ds, batch_size: int, rng) -> tuple[Batch, Batch]:
    """(balanced, random) pair drawn from one rng stream in fixed order."""
    lbs = draw_balanced(ds, batch_size, rng)
    rrs = draw_random(ds, batch_size, rng, provenance=Provenance.RRS)
    return lbs, rrs

"""Threshold (and top-k) neighbor selection with balance weights."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core_numeric import cosine_matrix
from .errors import ConfigInvalid, DimensionMismatch, KTooLarge
from .memory import FeatureMemory


@dataclass(frozen=True)
class SelectionConfig:
    lam: float = 0.55
    mode: str = "adaptive"
    k: int = 10

    def __post_init__(self):
        if self.mode not in ("adaptive", "top_k"):
            raise ConfigInvalid(f"unknown selection mode {self.mode!r}")
        if not -1.0 <= self.lam <= 1.0:
            raise ConfigInvalid(f"lambda must be in [-1,1], got {self.lam}")
        if self.mode == "top_k" and self.k < 1:
            raise ConfigInvalid("k must be positive")


def balance_weight(count: int) -> float:
    """1 / (n ln n) for n >= 2 selected items (self included), else 0."""
    if count < 2:
        return 0.0
    return 1.0 / (count * math.log(count))


class SelectionSet:
    """Per-image neighbor lists in CSR form; every row contains its own index."""

    def __init__(self, indptr, indices):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.counts = np.diff(self.indptr)
        self.balance_weights = np.array([balance_weight(int(c)) for c in self.counts])

    @classmethod
    def from_rows(cls, rows) -> "SelectionSet":
        rows = [np.unique(np.asarray(r, dtype=np.int64)) for r in rows]
        for i, r in enumerate(rows):
            if i not in r:
                rows[i] = np.sort(np.append(r, i))
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        return cls(indptr, np.concatenate(rows) if rows else np.zeros(0, np.int64))

    @classmethod
    def self_only(cls, n: int) -> "SelectionSet":
        return cls(np.arange(n + 1), np.arange(n))

    def __len__(self) -> int:
        return self.counts.size

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def rows(self):
        return [self.row(i) for i in range(len(self))]

    def neighbors(self, i: int) -> np.ndarray:
        """Row ``i`` without ``i`` itself."""
        r = self.row(i)
        return r[r != i]

    def dense(self) -> np.ndarray:
        n = len(self)
        out = np.zeros((n, n), dtype=bool)
        rows = np.repeat(np.arange(n), self.counts)
        out[rows, self.indices] = True
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SelectionSet)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )


def similarities(mem: FeatureMemory, embeddings) -> np.ndarray:
    f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if f.shape != (mem.n_items, mem.dim):
        raise DimensionMismatch(f"expected {(mem.n_items, mem.dim)} embeddings, got {f.shape}")
    return cosine_matrix(f, mem.columns)


def select(mem: FeatureMemory, embeddings, cfg: SelectionConfig) -> SelectionSet:
    """Row i selects memory items j with cosine(M[j], f_i) >= lambda (adaptive)
    or the k most similar items (top_k); i itself is always selected."""
    sims = similarities(mem, embeddings)
    if cfg.mode == "adaptive":
        return SelectionSet(*_kernels.threshold_select(sims, cfg.lam))
    if cfg.k >= mem.n_items:
        raise KTooLarge(f"k={cfg.k} must be < N_t={mem.n_items}")
    return SelectionSet(*_kernels.topk_select(sims, cfg.k))


def gini(values) -> float:
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    if n == 0 or x.sum() == 0:
        return 0.0
    # mean absolute difference form: sum_i (2i - n - 1) x_(i) / (n * sum x)
    ranks = np.arange(1, n + 1)
    return float(np.sum((2 * ranks - n - 1) * x) / (n * x.sum()))


def selection_stats(sel: SelectionSet) -> dict:
    counts = sel.counts
    values, freq = np.unique(counts, return_counts=True)
    return {
        "mean_count": float(counts.mean()),
        "max_count": int(counts.max()),
        "count_histogram": {int(v): int(f) for v, f in zip(values, freq)},
        "gini": gini(counts),
    }

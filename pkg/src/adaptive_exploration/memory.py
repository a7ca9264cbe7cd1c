"""Exemplar feature memory and its update-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_numeric import l2_normalize, tempered_softmax
from .errors import ConfigInvalid, DimensionMismatch, EpochOutOfRange, IndexOutOfRange, ShapeMismatch
from .model import pack_matrices, unpack_matrices

SNAPSHOT_MAGIC = b"AEMB"


class FeatureMemory:
    """One unit-norm exemplar per target image.

    Stored row-major as ``(N_t, D)``: row ``k`` is memory column ``M[k]``.
    Columns start at exactly zero and are flagged in ``updated_mask`` once
    written.
    """

    def __init__(self, n_items: int, dim: int):
        if n_items < 1 or dim < 1:
            raise ShapeMismatch("memory needs at least one item and one dimension")
        self.columns = np.zeros((n_items, dim))
        self.updated_mask = np.zeros(n_items, dtype=bool)

    @property
    def n_items(self) -> int:
        return self.columns.shape[0]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def logits(self, embeddings) -> np.ndarray:
        f = np.asarray(embeddings, dtype=np.float64)
        if f.shape[-1] != self.dim:
            raise DimensionMismatch(f"embedding dim {f.shape[-1]} != memory dim {self.dim}")
        return f @ self.columns.T

    def update(self, indices, embeddings, mu: float) -> None:
        """Blend rows ``indices`` toward ``embeddings`` and renormalize."""
        if not 0.0 <= mu <= 1.0:
            raise ConfigInvalid(f"mu must be in [0,1], got {mu}")
        idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        if np.any(idx < 0) or np.any(idx >= self.n_items):
            raise IndexOutOfRange(f"memory index out of range [0, {self.n_items})")
        if f.shape != (idx.size, self.dim):
            raise DimensionMismatch(f"expected {(idx.size, self.dim)} embeddings, got {f.shape}")
        if mu == 0.0:
            blended = f
        else:
            blended = mu * self.columns[idx] + (1.0 - mu) * f
        # mu=1 on an unwritten column blends to zero: leave it unwritten
        live = np.linalg.norm(blended, axis=1) > 0
        if not np.all(live):
            idx, blended = idx[live], blended[live]
        self.columns[idx] = l2_normalize(blended)
        self.updated_mask[idx] = True

    def copy(self) -> "FeatureMemory":
        m = FeatureMemory(self.n_items, self.dim)
        m.columns[:] = self.columns
        m.updated_mask[:] = self.updated_mask
        return m

    def to_bytes(self) -> bytes:
        # single-layer payload: rows = items, the "bias" slot carries the mask
        return pack_matrices(SNAPSHOT_MAGIC, [(self.columns, self.updated_mask.astype(np.float64))])

    @classmethod
    def from_bytes(cls, data: bytes) -> "FeatureMemory":
        layers = unpack_matrices(SNAPSHOT_MAGIC, data)
        if len(layers) != 1:
            raise ShapeMismatch("memory snapshot must hold exactly one matrix")
        cols, mask = layers[0]
        m = cls(*cols.shape)
        m.columns[:] = cols
        m.updated_mask[:] = mask != 0
        return m

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FeatureMemory":
        return cls.from_bytes(Path(path).read_bytes())


def class_probabilities(mem: FeatureMemory, embedding, tau: float) -> np.ndarray:
    """p(k | x) = softmax_k(M[k]·f / tau) over all memory items."""
    return tempered_softmax(mem.logits(embedding), tau)


def update_column(mem: FeatureMemory, i: int, embedding, mu: float) -> None:
    if not 0 <= i < mem.n_items:
        raise IndexOutOfRange(f"column {i} out of range [0, {mem.n_items})")
    mem.update([i], np.asarray(embedding)[None, :], mu)


@dataclass(frozen=True)
class MuSchedule:
    mu_max: float
    total_epochs: int
    mode: str = "varying"

    def __post_init__(self):
        if not 0.0 <= self.mu_max <= 1.0:
            raise ConfigInvalid(f"mu_max must be in [0,1], got {self.mu_max}")
        if self.total_epochs < 1:
            raise ConfigInvalid("total_epochs must be positive")
        if self.mode not in ("varying", "constant"):
            raise ConfigInvalid(f"unknown mu mode {self.mode!r}")


def mu_at(schedule: MuSchedule, epoch: int) -> float:
    """Linear ramp 0 -> mu_max over epochs 0..K-1, or the constant mu_max."""
    K = schedule.total_epochs
    if not 0 <= epoch < K:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {K})")
    if schedule.mode == "constant" or K == 1:
        return schedule.mu_max
    # divide first so the last epoch lands exactly on mu_max
    return schedule.mu_max * (epoch / (K - 1))

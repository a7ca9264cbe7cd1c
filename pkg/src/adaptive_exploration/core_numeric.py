"""Numeric kernels shared by every module.

All math runs in float64. Vector arguments may be 1-D (a single vector) or
2-D, in which case each row is treated as one vector.
"""
from __future__ import annotations

import numpy as np

from .errors import LengthMismatch, NonPositiveTemperature, ZeroVector


def as_vec(v) -> np.ndarray:
    """Coerce to a finite float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite entries in vector")
    return arr


def l2_normalize(v) -> np.ndarray:
    v = as_vec(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ZeroVector("cannot normalize a zero vector")
    return v / norm


def cosine(a, b) -> float:
    """Cosine similarity; 0.0 if either argument is the zero vector."""
    a = as_vec(a)
    b = as_vec(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    c = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, c))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine between rows of ``a`` and rows of ``b``.

    Zero rows produce zero similarity, same convention as :func:`cosine`.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise LengthMismatch(f"dims differ: {a.shape[1]} vs {b.shape[1]}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    na[na == 0] = 1.0
    nb[nb == 0] = 1.0
    return (a / na[:, None]) @ (b / nb[:, None]).T


def tempered_softmax(logits, tau: float) -> np.ndarray:
    """softmax(logits / tau) along the last axis, max-subtracted."""
    if not tau > 0:
        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    z = as_vec(logits) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Rng:
    """Seeded generator backed by numpy's PCG64 (a permuted LCG).

    PCG64's bit stream is fixed across platforms and numpy versions; keep one
    instance per owner, it is not safe to share between threads.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def raw(self, n: int) -> np.ndarray:
        """``n`` raw 64-bit draws straight from the bit generator."""
        return self._gen.bit_generator.random_raw(n)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, scale=1.0, size=None):
        return self._gen.normal(0.0, scale, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream from (seed, key)."""
        ss = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(ss.generate_state(1, np.uint64)[0]))

"""Training losses and their gradients with respect to embeddings.

Every loss here averages over the minibatch. Memory columns are constants:
the gradients flow only into the embeddings (and into the source classifier
for :func:`loss_source`).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core_numeric import log_softmax
from .errors import ConfigInvalid, DimensionMismatch, LabelOutOfRange, MissingSelection
from .memory import FeatureMemory
from .model import GradientBuffer, SourceClassifier, Tape
from .selection import SelectionSet

LOSS_KEYS = ("L_s", "L_alpha", "L_beta", "combined")


@dataclass
class LossValue:
    total: float
    components: dict = field(default_factory=dict)


@dataclass
class BatchContext:
    target_indices: np.ndarray
    embeddings: np.ndarray
    tape: Tape | None = None
    selection: SelectionSet | None = None
    source_embeddings: np.ndarray | None = None
    source_labels: np.ndarray | None = None
    source_tape: Tape | None = None

    def __post_init__(self):
        self.target_indices = np.asarray(self.target_indices, dtype=np.int64)
        if np.unique(self.target_indices).size != self.target_indices.size:
            raise ValueError("batch indices must be unique")


def _batch(embeddings, indices, mem: FeatureMemory | None = None):
    f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    if f.shape[0] != idx.size:
        raise DimensionMismatch(f"{f.shape[0]} embeddings for {idx.size} indices")
    if mem is not None and f.shape[1] != mem.dim:
        raise DimensionMismatch(f"embedding dim {f.shape[1]} != memory dim {mem.dim}")
    return f, idx


def loss_source(clf: SourceClassifier, embeddings, labels):
    """Mean cross-entropy of the (untempered) source classifier.

    Returns ``(loss, grad_embeddings, classifier GradientBuffer)``.
    """
    f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if f.shape[1] != clf.dim:
        raise DimensionMismatch(f"embedding dim {f.shape[1]} != classifier dim {clf.dim}")
    if np.any(y < 0) or np.any(y >= clf.n_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {clf.n_classes})")
    W, b = clf.params
    logp = log_softmax(f @ W.T + b)
    B = f.shape[0]
    loss = -float(np.mean(logp[np.arange(B), y]))
    d = np.exp(logp)
    d[np.arange(B), y] -= 1.0
    d /= B
    return loss, d @ W, GradientBuffer([d.T @ f, d.sum(axis=0)])


def _memory_xent(mem, f, tau, indptr, indices, weights):
    if not tau > 0:
        from .errors import NonPositiveTemperature

        raise NonPositiveTemperature(f"tau must be > 0, got {tau}")
    per_sample, dlogits = _kernels.sparse_xent(f @ mem.columns.T / tau, indptr, indices, weights)
    B = f.shape[0]
    return float(per_sample.sum() / B), (dlogits @ mem.columns) / (tau * B), per_sample


def loss_alpha(mem: FeatureMemory, embeddings, indices, tau: float, skip_unwritten: bool = False):
    """Mean of -log p(i | x_i): each image is its own class.

    With ``skip_unwritten`` samples whose own memory column was never written
    contribute zero (the batch mean still divides by the full batch size).
    """
    f, idx = _batch(embeddings, indices, mem)
    B = idx.size
    weights = mem.updated_mask[idx].astype(np.float64) if skip_unwritten else np.ones(B)
    loss, grad, _ = _memory_xent(mem, f, tau, np.arange(B + 1), idx, weights)
    return loss, grad


def _neighbor_csr(selection: SelectionSet, idx):
    if selection is None:
        raise MissingSelection("no selection available for this batch")
    if np.any(idx >= len(selection)) or np.any(idx < 0):
        raise MissingSelection("batch index without a selection row")
    rows = [selection.neighbors(i) for i in idx]
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([r.size for r in rows])
    indices = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    return indptr, indices


def loss_beta(mem: FeatureMemory, embeddings, indices, selection: SelectionSet, tau: float,
              balanced: bool = True, return_per_sample: bool = False):
    """Mean over the batch of -sum_{j != i} v_i^j log p(j | x_i).

    With ``balanced`` each sample is scaled by ``balance_weight(|v_i|)``, which
    drops samples whose only selection is themselves.
    """
    f, idx = _batch(embeddings, indices, mem)
    indptr, nbr = _neighbor_csr(selection, idx)
    weights = selection.balance_weights[idx] if balanced else np.ones(idx.size)
    loss, grad, per = _memory_xent(mem, f, tau, indptr, nbr, np.ascontiguousarray(weights))
    if return_per_sample:
        return loss, grad, per
    return loss, grad


def loss_combined(ls: float, lalpha: float, lbeta: float, delta: float, xi: float) -> float:
    """xi * (L_alpha + delta * L_beta) + (1 - xi) * L_s"""
    if delta < 0 or not 0.0 <= xi <= 1.0:
        raise ConfigInvalid("need delta >= 0 and xi in [0, 1]")
    return xi * (lalpha + delta * lbeta) + (1.0 - xi) * ls


def loss_gamma_value(mem: FeatureMemory, embeddings, selection: SelectionSet, lam: float) -> float:
    """Selection objective sum_i sum_j v_i^j (d(M[j], f_i) - (1 - lam)) with
    d = 1 - cosine: the similarity threshold lam becomes the distance
    threshold 1 - lam, so thresholding cosine at lam minimizes it."""
    from .selection import similarities

    d = 1.0 - similarities(mem, embeddings)
    v = selection.dense()
    return float(np.sum(np.where(v, d - (1.0 - lam), 0.0)))


def _positive_mask(selection: SelectionSet, idx):
    if selection is None:
        raise MissingSelection("no selection available for this batch")
    dense_rows = np.zeros((idx.size, idx.size), dtype=bool)
    for p, i in enumerate(idx):
        dense_rows[p] = np.isin(idx, selection.row(i))
    np.fill_diagonal(dense_rows, False)
    return dense_rows


def _pairwise_dist(f):
    diff = f[:, None, :] - f[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2)), diff


def loss_triplet_baseline(embeddings, indices, selection: SelectionSet, margin: float = 0.3):
    """Batch-hard triplet loss over Euclidean distances.

    For anchor a: max(0, max_{p in pos(a)} d(a,p) - min_{n in neg(a)} d(a,n) + margin),
    positives being batch members selected as a's neighbors. Averaged over
    anchors having at least one positive and one negative; 0 if none do.
    """
    f, idx = _batch(embeddings, indices)
    pos = _positive_mask(selection, idx)
    neg = ~pos
    np.fill_diagonal(neg, False)
    dist, diff = _pairwise_dist(f)
    grad = np.zeros_like(f)
    valid = pos.any(axis=1) & neg.any(axis=1)
    n_valid = int(valid.sum())
    if n_valid == 0:
        return 0.0, grad
    total = 0.0
    for a in np.flatnonzero(valid):
        dp = np.where(pos[a], dist[a], -np.inf)
        dn = np.where(neg[a], dist[a], np.inf)
        p = int(np.argmax(dp))
        n = int(np.argmin(dn))
        h = dist[a, p] - dist[a, n] + margin
        if h <= 0:
            continue
        total += h
        if dist[a, p] > 0:
            u = diff[a, p] / dist[a, p]
            grad[a] += u
            grad[p] -= u
        if dist[a, n] > 0:
            u = diff[a, n] / dist[a, n]
            grad[a] -= u
            grad[n] += u
    return total / n_valid, grad / n_valid


def loss_contrastive_baseline(embeddings, indices, selection: SelectionSet, margin: float = 1.0):
    """mean_{pos pairs} d^2 + mean_{neg pairs} max(0, margin - d)^2 over ordered
    batch pairs; either mean is 0 when its pair set is empty."""
    f, idx = _batch(embeddings, indices)
    pos = _positive_mask(selection, idx)
    neg = ~pos
    np.fill_diagonal(neg, False)
    dist, diff = _pairwise_dist(f)
    grad = np.zeros_like(f)
    loss = 0.0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos:
        loss += float(np.sum(dist[pos] ** 2)) / n_pos
        # d(d^2)/df_a = 2 (f_a - f_b); the pair also moves f_b
        coef = 2.0 * pos / n_pos
        g = np.einsum("ab,abd->ad", coef, diff)
        grad += g - np.einsum("ab,abd->bd", coef, diff)
    if n_neg:
        hinge = np.where(neg, np.maximum(0.0, margin - dist), 0.0)
        loss += float(np.sum(hinge ** 2)) / n_neg
        safe = np.where(dist > 0, dist, 1.0)
        coef = np.where((hinge > 0) & (dist > 0), -2.0 * hinge / safe, 0.0) / n_neg
        grad += np.einsum("ab,abd->ad", coef, diff) - np.einsum("ab,abd->bd", coef, diff)
    return loss, grad

"""Pure numpy implementations of the hot kernels.

Signatures and results match the compiled ``_ckernels`` module exactly;
``adaptive_exploration._kernels`` picks one at import time.
"""
import numpy as np


def threshold_select(sims, lam):
    """CSR rows ``{j : sims[i, j] >= lam} ∪ {i}``, indices ascending."""
    sims = np.asarray(sims, dtype=np.float64)
    mask = sims >= lam
    np.fill_diagonal(mask, True)
    counts = mask.sum(axis=1)
    indptr = np.zeros(sims.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.nonzero(mask)[1].astype(np.int64)
    return indptr, indices


def topk_select(sims, k):
    """The ``k`` most similar columns per row plus self; ties go to the lower index."""
    sims = np.asarray(sims, dtype=np.float64)
    n = sims.shape[0]
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    mask = np.zeros(sims.shape, dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    np.fill_diagonal(mask, True)
    counts = mask.sum(axis=1)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = np.nonzero(mask)[1].astype(np.int64)
    return indptr, indices


def sparse_xent(logits, indptr, indices, weights):
    """Per-row ``-w_i * sum_{j in row i} log softmax(logits_i)_j`` and its
    gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp = z - lse[:, None]
    p = np.exp(logp)
    counts = np.diff(indptr)
    rows = np.repeat(np.arange(logits.shape[0]), counts)
    picked = logp[rows, indices]
    loss = -np.bincount(rows, weights=picked, minlength=logits.shape[0])
    loss = loss * weights
    grad = p * (counts * weights)[:, None]
    np.subtract.at(grad, (rows, indices), weights[rows])
    return loss, grad


def rank_scan(order, q_ids, q_cams, g_ids, g_cams, cross_camera):
    """AP and first-hit rank per query, scanning galleries in ``order``.

    Gallery entries sharing identity and camera with the query are skipped
    when ``cross_camera`` is set. ``first_hit`` is 0-based, -1 for queries
    without any remaining match.
    """
    nq = order.shape[0]
    ap = np.zeros(nq)
    first = np.full(nq, -1, dtype=np.int64)
    for q in range(nq):
        o = order[q]
        same = g_ids[o] == q_ids[q]
        if cross_camera:
            keep = ~(same & (g_cams[o] == q_cams[q]))
            same = same[keep]
        hits = np.flatnonzero(same)
        if hits.size == 0:
            continue
        first[q] = hits[0]
        ap[q] = np.mean(np.arange(1, hits.size + 1) / (hits + 1.0))
    return ap, first

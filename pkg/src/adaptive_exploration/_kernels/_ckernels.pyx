# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def threshold_select(double[:, ::1] sims, double lam):
    cdef Py_ssize_t n = sims.shape[0], m = sims.shape[1], i, j, nnz = 0
    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] indptr = indptr_arr
    # branchless: the comparison outcome is unpredictable on real similarities
    for i in range(n):
        for j in range(m):
            nnz += (sims[i, j] >= lam) | (i == j)
        indptr[i + 1] = nnz
    indices_arr = np.empty(nnz + 1, dtype=np.int64)
    cdef long long[::1] indices = indices_arr
    nnz = 0
    for i in range(n):
        for j in range(m):
            indices[nnz] = j
            nnz += (sims[i, j] >= lam) | (i == j)
    return indptr_arr, indices_arr[:nnz]


def topk_select(double[:, ::1] sims, Py_ssize_t k):
    cdef Py_ssize_t n = sims.shape[0], m = sims.shape[1], i, j, t, filled, c
    cdef double s
    best_arr = np.empty(k, dtype=np.int64)
    cdef long long[::1] best = best_arr
    mark_arr = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] mark = mark_arr
    indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long long[::1] indptr = indptr_arr
    rows = []
    for i in range(n):
        # insertion into a descending list; strict > keeps the lower index on ties
        filled = 0
        for j in range(m):
            s = sims[i, j]
            if filled == k and not (s > sims[i, best[k - 1]]):
                continue
            t = filled if filled < k else k - 1
            while t > 0 and s > sims[i, best[t - 1]]:
                best[t] = best[t - 1]
                t -= 1
            best[t] = j
            if filled < k:
                filled += 1
        for t in range(filled):
            mark[best[t]] = 1
        mark[i] = 1
        row = np.flatnonzero(mark_arr)
        c = row.shape[0]
        for t in range(c):
            mark[row[t]] = 0
        rows.append(row)
        indptr[i + 1] = indptr[i] + c
    indices_arr = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    return indptr_arr, indices_arr


def sparse_xent(double[:, ::1] logits, long long[::1] indptr, long long[::1] indices, double[::1] weights):
    cdef Py_ssize_t b = logits.shape[0], n = logits.shape[1], i, j, t, c
    cdef double mx, ssum, lse, w, acc
    loss_arr = np.zeros(b)
    grad_arr = np.empty((b, n))
    cdef double[::1] loss = loss_arr
    cdef double[:, ::1] grad = grad_arr
    for i in range(b):
        mx = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > mx:
                mx = logits[i, j]
        ssum = 0.0
        for j in range(n):
            grad[i, j] = exp(logits[i, j] - mx)
            ssum += grad[i, j]
        lse = log(ssum)
        w = weights[i]
        c = indptr[i + 1] - indptr[i]
        for j in range(n):
            grad[i, j] = (grad[i, j] / ssum) * (c * w)
        acc = 0.0
        for t in range(indptr[i], indptr[i + 1]):
            j = indices[t]
            acc += (logits[i, j] - mx) - lse
            grad[i, j] -= w
        loss[i] = -acc * w
    return loss_arr, grad_arr


def rank_scan(long long[:, ::1] order, long long[::1] q_ids, long long[::1] q_cams,
              long long[::1] g_ids, long long[::1] g_cams, bint cross_camera):
    cdef Py_ssize_t nq = order.shape[0], ng = order.shape[1], q, t, pos, hits
    cdef long long g
    cdef double acc
    ap_arr = np.zeros(nq)
    first_arr = np.full(nq, -1, dtype=np.int64)
    cdef double[::1] ap = ap_arr
    cdef long long[::1] first = first_arr
    for q in range(nq):
        pos = 0
        hits = 0
        acc = 0.0
        for t in range(ng):
            g = order[q, t]
            if g_ids[g] == q_ids[q]:
                if cross_camera and g_cams[g] == q_cams[q]:
                    continue
                hits += 1
                acc += hits / (pos + 1.0)
                if hits == 1:
                    first[q] = pos
            pos += 1
        if hits > 0:
            ap[q] = acc / hits
    return ap_arr, first_arr

import numpy as np
import pytest

from adaptive_exploration import _kernels

IMPLS = sorted(_kernels.BACKENDS.items())


def test_backend_reported():
    assert _kernels.BACKEND in _kernels.BACKENDS


@pytest.mark.parametrize("name,impl", IMPLS)
@pytest.mark.parametrize("seed", range(5))
def test_select_kernels_agree(name, impl, seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(2, 80))
    sims = np.round(r.uniform(-1, 1, (n, n)), 1)  # coarse values force ties
    ref = _kernels.BACKENDS["python"]
    for lam in (-1.0, 0.0, 0.3, 1.0):
        a = _kernels.threshold_select(sims, lam, impl)
        b = _kernels.threshold_select(sims, lam, ref)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        indptr, idx = a
        for i in range(n):
            assert i in idx[indptr[i]:indptr[i + 1]]
    k = int(r.integers(1, n))
    a = _kernels.topk_select(sims, k, impl)
    b = _kernels.topk_select(sims, k, ref)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.mark.parametrize("name,impl", IMPLS)
def test_sparse_xent_agree(name, impl):
    r = np.random.default_rng(0)
    logits = r.normal(size=(7, 20)) * 10
    indptr = np.array([0, 1, 3, 3, 6, 8, 9, 12])
    indices = r.integers(0, 20, 12)
    w = r.uniform(size=7)
    la, ga = _kernels.sparse_xent(logits, indptr, indices, w, impl)
    lb, gb = _kernels.sparse_xent(logits, indptr, indices, w, _kernels.BACKENDS["python"])
    np.testing.assert_allclose(la, lb, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(ga, gb, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("name,impl", IMPLS)
def test_rank_scan_agree(name, impl):
    r = np.random.default_rng(1)
    sims = r.normal(size=(15, 60))
    order = np.argsort(-sims, axis=1, kind="stable")
    q_ids, g_ids = r.integers(0, 5, 15), r.integers(0, 5, 60)
    q_cams, g_cams = r.integers(0, 3, 15), r.integers(0, 3, 60)
    for cross in (True, False):
        a = _kernels.rank_scan(order, q_ids, q_cams, g_ids, g_cams, cross, impl)
        b = _kernels.rank_scan(order, q_ids, q_cams, g_ids, g_cams, cross, _kernels.BACKENDS["python"])
        np.testing.assert_array_equal(a[1], b[1])
        np.testing.assert_allclose(a[0], b[0], rtol=0, atol=1e-15)

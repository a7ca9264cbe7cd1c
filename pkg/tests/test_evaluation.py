import numpy as np
import pytest

import oracles
from adaptive_exploration.data_io import FeatureTable, SynthConfig, generate, split
from adaptive_exploration.errors import DimensionMismatch, NoValidQueries
from adaptive_exploration.evaluation import compare_runs, evaluate, evaluate_features, metrics_csv


def unit(a):
    return np.array([np.cos(a), np.sin(a)])


def test_ap_worked_example():
    # matches at ranks 1 and 3 -> (1/1 + 2/3) / 2
    q = [unit(0.0)]
    g = [unit(0.1), unit(0.2), unit(0.3), unit(1.0)]
    r = evaluate_features(q, [0], [0], g, [0, 1, 0, 2], [1, 1, 1, 1])
    assert abs(r.mAP - 0.8333333333333334) < 1e-12
    assert r.rank1 == 1.0 and r.num_valid_queries == 1


def test_duplicate_ranks_first():
    g = [unit(0.5), unit(0.0), unit(2.0)]
    r = evaluate_features([unit(0.0)], [7], [0], g, [1, 7, 2], [1, 1, 1])
    assert r.mAP == 1.0 and r.rank1 == 1.0


def test_same_camera_matches_excluded():
    q = [unit(0.0), unit(1.0)]
    g = [unit(0.0), unit(1.0), unit(2.0)]
    r = evaluate_features(q, [0, 1], [0, 0], g, [0, 1, 2], [0, 1, 1])
    assert r.num_valid_queries == 1
    r2 = evaluate_features(q, [0, 1], [0, 0], g, [0, 1, 2], [0, 1, 1], cross_camera_filter=False)
    assert r2.num_valid_queries == 2
    with pytest.raises(NoValidQueries):
        evaluate_features(q[:1], [0], [0], g[:1], [0], [0])


def test_tie_broken_by_gallery_index():
    g = [unit(0.0), unit(0.0)]
    r = evaluate_features([unit(0.0)], [0], [0], g, [1, 0], [1, 1])
    assert r.rank1 == 0.0 and r.mAP == 0.5


@pytest.mark.parametrize("seed", range(8))
def test_matches_oracle(seed):
    r = np.random.default_rng(seed)
    nq, ng, d = int(r.integers(1, 40)), int(r.integers(5, 200)), 4
    Q, G = r.normal(size=(nq, d)), r.normal(size=(ng, d))
    qi, gi = r.integers(0, 6, nq), r.integers(0, 6, ng)
    qc, gc = r.integers(0, 3, nq), r.integers(0, 3, ng)
    for filt in (True, False):
        ref = oracles.evaluate(Q.tolist(), qi.tolist(), qc.tolist(), G.tolist(), gi.tolist(), gc.tolist(), filt)
        if ref is None:
            with pytest.raises(NoValidQueries):
                evaluate_features(Q, qi, qc, G, gi, gc, filt)
            continue
        got = evaluate_features(Q, qi, qc, G, gi, gc, filt, keep_per_query=True)
        for k in ("rank1", "rank5", "rank10", "mAP"):
            assert abs(getattr(got, k) - ref[k]) < 1e-12
        assert got.num_valid_queries == ref["num_valid_queries"]
        np.testing.assert_allclose([a for a in got.per_query_ap if a is not None], ref["aps"], atol=1e-12)


def test_leave_one_out_on_table():
    t = generate(SynthConfig(identities=6, images_per_identity=4, cameras=2, dim=8))
    r = evaluate(None, t, t, cross_camera_filter=True)
    assert r.num_valid_queries == len(t)
    assert 0 < r.mAP <= 1


def test_unrelated_gallery_row_never_raises_ap():
    r = np.random.default_rng(4)
    for _ in range(30):
        Q, G = r.normal(size=(5, 3)), r.normal(size=(20, 3))
        qi, gi = r.integers(0, 3, 5), r.integers(0, 3, 20)
        qc, gc = np.zeros(5, int), np.ones(20, int)
        base = evaluate_features(Q, qi, qc, G, gi, gc, keep_per_query=True).per_query_ap
        G2 = np.vstack([G, r.normal(size=(1, 3))])
        more = evaluate_features(Q, qi, qc, G2, np.append(gi, 99), np.append(gc, 1),
                                 keep_per_query=True).per_query_ap
        assert all(b <= a + 1e-15 for a, b in zip(base, more))


def test_model_dim_checked():
    from adaptive_exploration.model import EmbeddingModel
    t = generate(SynthConfig(identities=3, images_per_identity=4, dim=6))
    with pytest.raises(DimensionMismatch):
        evaluate(EmbeddingModel([5, 4]), t, t)


def test_report_csvs():
    t = generate(SynthConfig(identities=4, images_per_identity=4, cameras=2, dim=8))
    _, q, g = split(t, 0.25)
    r = evaluate(None, q, g)
    out = metrics_csv({"raw": r})
    assert out.splitlines()[0] == "arm,rank1,rank5,rank10,mAP,num_valid_queries"
    cmp = compare_runs({"a": r, "b": r}).splitlines()
    assert cmp[-1] == "b,a,0.000000,0.000000,0.000000,0.000000,0"
    with pytest.raises(ValueError):
        compare_runs({"a": r})

import numpy as np
import pytest

from adaptive_exploration.data_io import FeatureTable, SynthConfig, generate
from adaptive_exploration.errors import ConfigInvalid, DataEmpty, DimensionMismatch, EpochOutOfRange
from adaptive_exploration.memory import mu_at
from adaptive_exploration.trainer import (REPORT_FIELDS, TrainConfig, Trainer, config_fields,
                                          iteration_log_csv, lr_at, reports_csv, train)


def small_table(seed=0, c=6, per=6, dim=8):
    return generate(SynthConfig(identities=c, images_per_identity=per, cameras=3, dim=dim, seed=seed))


def small_cfg(**kw):
    base = dict(epochs=3, warm_epochs=1, batch_size=12, hidden=(16,), embed_dim=8, lr=0.05,
                lr_drop_epoch=2, tau=0.1, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_zero_lr_single_epoch_fills_memory():
    t = small_table()
    tr = Trainer(t, None, small_cfg(epochs=1, warm_epochs=1, batch_size=len(t), lr=0.0))
    before = [p.copy() for p in tr.model.params]
    tr.run()
    assert all(np.array_equal(a, b) for a, b in zip(before, tr.model.params))
    np.testing.assert_allclose(tr.memory.columns, tr.model.embed(t.features), atol=1e-12)
    assert tr.memory.updated_mask.all()
    assert tr.reports[0].L_beta >= 0


def test_warm_only_contributes_no_beta_gradient():
    t = small_table()
    cfg = small_cfg(epochs=2, warm_epochs=2)
    a = Trainer(t, None, cfg)
    a.run()
    b = Trainer(t, None, small_cfg(epochs=2, warm_epochs=2, delta=0.0))
    b.run()
    # delta is unused while warming up
    assert all(np.array_equal(x, y) for x, y in zip(a.model.params, b.model.params))


def test_select_all_counts():
    t = small_table()
    _, reps = train(t, None, small_cfg(lam=-1.0, balanced=False))
    assert all(r.mean_count == len(t) and r.max_count == len(t) for r in reps)


def test_report_length_and_schedules():
    cfg = small_cfg(epochs=4, lr_drop_epoch=2, lr_drop_factor=10.0)
    tr = Trainer(small_table(), None, cfg)
    _, reps = tr.run()
    assert len(reps) == 4 and [r.epoch for r in reps] == [0, 1, 2, 3]
    assert [r.lr for r in reps] == [lr_at(cfg, k) for k in range(4)]
    assert [r.mu for r in reps] == [mu_at(tr.mu_schedule, k) for k in range(4)]
    assert reps[0].mu == 0.0 and reps[-1].mu == cfg.mu_max


def test_lr_at_examples():
    cfg = TrainConfig()
    assert lr_at(cfg, 0) == 0.1 and lr_at(cfg, 39) == 0.1
    assert abs(lr_at(cfg, 40) - 0.01) < 1e-18 and abs(lr_at(cfg, 59) - 0.01) < 1e-18
    with pytest.raises(EpochOutOfRange):
        lr_at(cfg, 60)


@pytest.mark.parametrize("kw", [dict(tau=0), dict(lam=1.2), dict(xi=1.5), dict(delta=-1),
                                dict(epochs=0), dict(warm_epochs=5, epochs=3), dict(batch_size=0),
                                dict(mu_mode="x"), dict(objective="x"), dict(momentum=1.0),
                                dict(init="x"), dict(selection_mode="x")])
def test_config_validation(kw):
    with pytest.raises(ConfigInvalid):
        Trainer(small_table(), None, small_cfg(**kw))


def test_topk_needs_k_below_n():
    with pytest.raises(ConfigInvalid):
        Trainer(small_table(), None, small_cfg(selection_mode="top_k", top_k=36))


def test_identity_init_width_checked():
    with pytest.raises(ConfigInvalid):
        Trainer(small_table(), None, small_cfg(init="identity", hidden=(8,)))


def test_input_errors():
    t = small_table()
    with pytest.raises(DataEmpty):
        Trainer(None, None, small_cfg())
    with pytest.raises(DimensionMismatch):
        Trainer(t, small_table(dim=4), small_cfg())


def test_deterministic_bitwise():
    t = small_table(1)
    src = small_table(2)
    runs = []
    for _ in range(2):
        m, reps = train(t, src, small_cfg(xi=0.6))
        runs.append((m, reps))
    (m1, r1), (m2, r2) = runs
    assert all(np.array_equal(a, b) for a, b in zip(m1.params, m2.params))
    assert reports_csv(r1) == reports_csv(r2)


def test_seed_changes_result():
    t = small_table()
    m1, _ = train(t, None, small_cfg(seed=1))
    m2, _ = train(t, None, small_cfg(seed=2))
    assert not np.array_equal(m1.params[0], m2.params[0])


def test_transfer_records_source_loss():
    t = small_table(1)
    _, reps = train(t, small_table(2), small_cfg(xi=0.5))
    assert all(r.L_s > 0 for r in reps)
    _, reps = train(t, None, small_cfg(xi=0.5))
    assert all(r.L_s == 0 for r in reps)


def test_unlabeled_source_rejected():
    with pytest.raises(ConfigInvalid):
        Trainer(small_table(), small_table().unlabeled(), small_cfg(xi=0.5))


@pytest.mark.parametrize("arm", [dict(objective="triplet"), dict(objective="contrastive"),
                                 dict(selection_mode="top_k", top_k=3), dict(mu_mode="constant"),
                                 dict(memory_update_timing="per_epoch"),
                                 dict(sample_with_replacement=True), dict(layer_lr_scales=(0.1, 1.0)),
                                 dict(init="identity", hidden=(16,), init_noise=0.0)])
def test_variants_run_finite(arm):
    _, reps = train(small_table(), None, small_cfg(**arm))
    assert all(np.isfinite([r.L_alpha, r.L_beta, r.combined]).all() for r in reps)


def test_layer_scales_length_checked():
    with pytest.raises(ConfigInvalid):
        Trainer(small_table(), None, small_cfg(layer_lr_scales=(1.0,)))


def test_csv_outputs():
    tr = Trainer(small_table(), None, small_cfg(epochs=2, warm_epochs=0), log_iterations=True)
    _, reps = tr.run()
    lines = reports_csv(reps).splitlines()
    assert lines[0] == ",".join(REPORT_FIELDS) and len(lines) == 3
    log = iteration_log_csv(tr.iteration_log).splitlines()
    assert log[0] == "epoch,iter,L_s,L_alpha,L_beta,combined"
    assert len(log) == 1 + 2 * 3
    assert "lam" in config_fields() and "seed" in config_fields()


def test_instance_loss_decreases():
    # well-spread instances: the instance term alone should fall
    t = generate(SynthConfig(identities=5, images_per_identity=8, cameras=2, dim=8,
                             sigma_within=1.0, sigma_cam=0.0, seed=0))
    _, reps = train(t, None, small_cfg(epochs=10, warm_epochs=10, lr=0.1, lr_drop_epoch=10,
                                       batch_size=40, mu_max=0.0))
    assert reps[-1].L_alpha < reps[1].L_alpha

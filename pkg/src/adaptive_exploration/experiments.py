"""Arm definitions and drivers shared by the CLI and the acceptance gate.

An *arm* is a named modification of a base :class:`TrainConfig`:

``adaptive+balance``  threshold selection with the balance weight
``adaptive``          threshold selection, unweighted neighbor loss
``topk:K``            K nearest memory columns, balance weight kept
``triplet``           batch-hard triplet loss on the selection
``contrastive``       pairwise contrastive loss on the selection
``mu-const``          adaptive+balance with a constant memory rate
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data_io import FeatureTable, SynthConfig, generate, split
from .errors import ConfigInvalid
from .evaluation import MetricsReport, evaluate
from .trainer import EpochReport, TrainConfig, Trainer


def desk_config(**overrides) -> TrainConfig:
    """Hyper-parameters that train stably on the 720-image synthetic set.

    The stock defaults are tuned for a pretrained CNN on ~13k images; on a small
    MLP they saturate the instance loss within a few epochs and the neighbor
    pull then contracts every embedding onto one point.  A softer temperature,
    smaller batches and step size, and an identity-preserving init (standing in
    for a pretrained backbone) avoid that.
    """
    base = dict(tau=0.2, lam=0.35, delta=2.0, batch_size=32, lr=0.02,
                hidden=(128,), init="identity", init_noise=0.02)
    base.update(overrides)
    return TrainConfig(**base)


def arm_config(arm: str, base: TrainConfig) -> TrainConfig:
    """Resolve an arm name against ``base``."""
    name = arm.strip()
    if name == "adaptive+balance":
        cfg = replace(base, selection_mode="adaptive", balanced=True, objective="ae")
    elif name == "adaptive":
        cfg = replace(base, selection_mode="adaptive", balanced=False, objective="ae")
    elif name.startswith("topk:"):
        try:
            k = int(name.split(":", 1)[1])
        except ValueError:
            raise ConfigInvalid(f"bad arm {arm!r}") from None
        cfg = replace(base, selection_mode="top_k", top_k=k, balanced=True, objective="ae")
    elif name in ("triplet", "contrastive"):
        cfg = replace(base, selection_mode="adaptive", objective=name)
    elif name == "mu-const":
        cfg = replace(base, selection_mode="adaptive", balanced=True, objective="ae",
                      mu_mode="constant")
    else:
        raise ConfigInvalid(f"unknown arm {arm!r}")
    cfg.validate()
    return cfg


@dataclass
class ArmResult:
    arm: str
    seed: int
    metrics: MetricsReport
    reports: list
    final_counts: np.ndarray

    @property
    def final(self) -> EpochReport:
        return self.reports[-1]


def synthetic_split(seed: int, synth: SynthConfig | None = None, query_fraction: float = 0.2):
    """Default synthetic set, split into (unlabeled train, query, gallery)."""
    cfg = replace(synth or SynthConfig(), seed=seed)
    return split(generate(cfg), query_fraction=query_fraction, seed=seed)


def run_arm(arm: str, base: TrainConfig, train: FeatureTable, query: FeatureTable,
            gallery: FeatureTable, source: FeatureTable | None = None,
            cross_camera_filter: bool = True) -> ArmResult:
    cfg = arm_config(arm, base)
    tr = Trainer(train, source, cfg)
    model, reports = tr.run()
    metrics = evaluate(model, query, gallery, cross_camera_filter=cross_camera_filter)
    sel = tr.final_selection()
    return ArmResult(arm, cfg.seed, metrics, reports, sel.counts.copy())


def run_seeds(arms, base: TrainConfig, seeds, synth: SynthConfig | None = None):
    """Every arm on every seed; data and training seed move together."""
    out = {a: [] for a in arms}
    for s in seeds:
        train, query, gallery = synthetic_split(s, synth)
        cfg = replace(base, seed=s)
        for a in arms:
            out[a].append(run_arm(a, cfg, train, query, gallery))
    return out


SWEEP_FIELDS = {"lambda": "lam", "mu-max": "mu_max", "tau": "tau", "delta": "delta", "xi": "xi"}


def sweep(param: str, values, base: TrainConfig, train, query, gallery, source=None,
          arm: str = "adaptive+balance"):
    """One run per value of ``param``; returns ``[(value, ArmResult)]``."""
    if param not in SWEEP_FIELDS:
        raise ConfigInvalid(f"cannot sweep {param!r}")
    field = SWEEP_FIELDS[param]
    return [(v, run_arm(arm, replace(base, **{field: float(v)}), train, query, gallery, source))
            for v in values]

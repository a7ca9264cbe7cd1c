"""The alternating training loop.

Each epoch: embed every target image, select neighbors against the memory,
then run shuffled minibatches of SGD on
``xi * (L_alpha + delta * L_beta) + (1 - xi) * L_s`` while refreshing the
memory rows of each batch (or all rows at epoch end).
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core_numeric import Rng
from .data_io import FeatureTable
from .errors import ConfigInvalid, DataEmpty, DimensionMismatch, EpochOutOfRange
from .memory import FeatureMemory, MuSchedule, mu_at
from .model import EmbeddingModel, GradientBuffer, SourceClassifier, backward, forward, sgd_step
from . import objectives as obj
from .selection import SelectionConfig, SelectionSet, select, selection_stats

OBJECTIVES = ("ae", "triplet", "contrastive")
REPORT_FIELDS = ("epoch", "mu", "lr", "L_alpha", "L_beta", "L_s", "mean_count", "max_count")


@dataclass
class TrainConfig:
    lam: float = 0.55
    tau: float = 0.05
    delta: float = 3.5
    xi: float = 0.6
    mu_max: float = 0.4
    mu_mode: str = "varying"
    epochs: int = 60
    warm_epochs: int = 5
    batch_size: int = 128
    lr: float = 0.1
    lr_drop_epoch: int = 40
    lr_drop_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    selection_mode: str = "adaptive"
    top_k: int = 10
    balanced: bool = True
    memory_update_timing: str = "per_iteration"
    objective: str = "ae"
    triplet_margin: float = 0.3
    contrastive_margin: float = 1.0
    hidden: tuple = (64,)
    embed_dim: int = 64
    init: str = "glorot"
    init_noise: float = 0.1
    skip_unwritten: bool = True
    layer_lr_scales: tuple | None = None
    sample_with_replacement: bool = False
    seed: int = 0

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigInvalid(msg)

        need(-1.0 <= self.lam <= 1.0, "lambda must be in [-1, 1]")
        need(self.tau > 0, "tau must be > 0")
        need(self.delta >= 0, "delta must be >= 0")
        need(0.0 <= self.xi <= 1.0, "xi must be in [0, 1]")
        need(0.0 <= self.mu_max <= 1.0, "mu_max must be in [0, 1]")
        need(self.mu_mode in ("varying", "constant"), "mu_mode must be varying|constant")
        need(self.epochs >= 1, "epochs must be >= 1")
        need(0 <= self.warm_epochs, "warm_epochs must be >= 0")
        need(self.warm_epochs <= self.epochs, "warm_epochs must not exceed epochs")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.lr >= 0, "lr must be >= 0")
        need(self.lr_drop_factor > 0, "lr_drop_factor must be > 0")
        need(0.0 <= self.momentum < 1.0, "momentum must be in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.selection_mode in ("adaptive", "top_k"), "selection_mode must be adaptive|top_k")
        need(self.top_k >= 1, "top_k must be >= 1")
        need(self.memory_update_timing in ("per_iteration", "per_epoch"),
             "memory_update_timing must be per_iteration|per_epoch")
        need(self.objective in OBJECTIVES, f"objective must be one of {OBJECTIVES}")
        need(self.embed_dim >= 1 and all(int(h) >= 1 for h in self.hidden), "layer sizes must be positive")
        need(self.init in ("glorot", "identity"), "init must be glorot|identity")
        need(self.init_noise >= 0, "init_noise must be >= 0")

    def selection_config(self) -> SelectionConfig:
        mode = self.selection_mode
        return SelectionConfig(lam=self.lam, mode=mode, k=self.top_k)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochReport:
    epoch: int
    mu: float
    lr: float
    L_alpha: float
    L_beta: float
    L_s: float
    combined: float
    mean_count: float
    max_count: int
    gini: float
    wall_time: float = field(default=0.0, compare=False)


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {cfg.epochs})")
    return cfg.lr if epoch < cfg.lr_drop_epoch else cfg.lr / cfg.lr_drop_factor


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in reports:
        w.writerow([r.epoch, repr(r.mu), repr(r.lr), repr(r.L_alpha), repr(r.L_beta), repr(r.L_s),
                    repr(r.mean_count), r.max_count])
    return buf.getvalue()


class Trainer:
    """Owns the model, memory and (in transfer mode) the source classifier."""

    def __init__(self, target: FeatureTable, source: FeatureTable | None, cfg: TrainConfig,
                 log_iterations: bool = False):
        cfg.validate()
        if target is None or len(target) == 0:
            raise DataEmpty("target table is empty")
        if source is not None and source.dim != target.dim:
            raise DimensionMismatch("source and target feature dims differ")
        self.cfg = cfg
        self.x = target.features.astype(np.float64)
        self.n = len(target)
        self.transfer = source is not None and cfg.xi < 1.0
        self.xi = cfg.xi if self.transfer else 1.0
        if cfg.selection_mode == "top_k" and cfg.top_k >= self.n:
            raise ConfigInvalid(f"top_k={cfg.top_k} must be < N_t={self.n}")

        root = Rng(cfg.seed)
        dims = [target.dim, *[int(h) for h in cfg.hidden], cfg.embed_dim]
        try:
            self.model = EmbeddingModel(dims, seed=int(root.spawn(1).integers(0, 2**63)),
                                        init=cfg.init, init_noise=cfg.init_noise)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None
        self.memory = FeatureMemory(self.n, cfg.embed_dim)
        self.mu_schedule = MuSchedule(cfg.mu_max, cfg.epochs, cfg.mu_mode)
        self._shuffle_rng = root.spawn(2)
        self._source_rng = root.spawn(3)
        self.velocity = GradientBuffer.zeros_like(self.model.params)
        self.lr_scales = None
        if cfg.layer_lr_scales is not None:
            if len(cfg.layer_lr_scales) != self.model.n_layers:
                raise ConfigInvalid("layer_lr_scales needs one entry per layer")
            self.lr_scales = [float(s) for s in cfg.layer_lr_scales for _ in range(2)]

        self.classifier = None
        if self.transfer:
            labels = source.ids
            if np.any(labels < 0):
                raise ConfigInvalid("source rows must be labeled")
            classes, self.source_y = np.unique(labels, return_inverse=True)
            if classes.size < 2:
                raise ConfigInvalid("source needs at least 2 identities")
            self.source_x = source.features.astype(np.float64)
            self.classifier = SourceClassifier(classes.size, cfg.embed_dim,
                                               seed=int(root.spawn(4).integers(0, 2**63)))
            self.clf_velocity = GradientBuffer.zeros_like(self.classifier.params)

        self.reports: list[EpochReport] = []
        self.selections: list[SelectionSet] = []
        self.iteration_log: list[tuple] | None = [] if log_iterations else None
        self.epoch = 0

    def _batches(self):
        B = min(self.cfg.batch_size, self.n)
        n_iter = -(-self.n // B)
        if self.cfg.sample_with_replacement:
            for _ in range(n_iter):
                # unique indices within a batch, batches drawn independently
                yield np.sort(self._shuffle_rng.permutation(self.n)[:B])
            return
        perm = self._shuffle_rng.permutation(self.n)
        for k in range(n_iter):
            yield perm[k * B:(k + 1) * B]

    def _target_loss(self, f, idx, sel, beta_coef):
        cfg = self.cfg
        if cfg.objective == "ae":
            la, ga = obj.loss_alpha(self.memory, f, idx, cfg.tau, cfg.skip_unwritten)
            lb, gb = obj.loss_beta(self.memory, f, idx, sel, cfg.tau, cfg.balanced)
            return la, lb, ga + beta_coef * gb, la + beta_coef * lb
        if cfg.objective == "triplet":
            lb, gb = obj.loss_triplet_baseline(f, idx, sel, cfg.triplet_margin)
        else:
            lb, gb = obj.loss_contrastive_baseline(f, idx, sel, cfg.contrastive_margin)
        return 0.0, lb, gb, lb

    def run_epoch(self) -> EpochReport:
        cfg, k = self.cfg, self.epoch
        t0 = time.perf_counter()
        feats = self.model.embed(self.x)
        sel = select(self.memory, feats, cfg.selection_config())
        self.selections.append(sel)
        stats = selection_stats(sel)
        mu = mu_at(self.mu_schedule, k)
        lr = lr_at(cfg, k)
        beta_coef = cfg.delta if k >= cfg.warm_epochs else 0.0
        if cfg.objective != "ae":
            # baselines have no instance term to warm up with; their single loss runs throughout
            beta_coef = 1.0
        sums = np.zeros(4)
        n_iter = 0
        for it, idx in enumerate(self._batches()):
            f, tape = forward(self.model, self.x[idx])
            la, lb, g_target, l_target = self._target_loss(f, idx, sel, beta_coef)
            grads = backward(self.model, tape, self.xi * g_target)
            ls = 0.0
            if self.transfer:
                sidx = self._source_rng.integers(0, self.source_x.shape[0], size=min(cfg.batch_size, self.source_x.shape[0]))
                fs, stape = forward(self.model, self.source_x[sidx])
                ls, gfs, gclf = obj.loss_source(self.classifier, fs, self.source_y[sidx])
                grads += backward(self.model, stape, (1.0 - self.xi) * gfs)
                sgd_step(self.classifier.params, gclf.scaled(1.0 - self.xi), lr, cfg.momentum,
                         cfg.weight_decay, self.clf_velocity)
            sgd_step(self.model.params, grads, lr, cfg.momentum, cfg.weight_decay, self.velocity,
                     self.lr_scales)
            if cfg.memory_update_timing == "per_iteration":
                self.memory.update(idx, f, mu)
            combined = self.xi * l_target + (1.0 - self.xi) * ls
            sums += (ls, la, lb, combined)
            n_iter += 1
            if self.iteration_log is not None:
                self.iteration_log.append((k, it, ls, la, lb, combined))
        if cfg.memory_update_timing == "per_epoch":
            self.memory.update(np.arange(self.n), feats, mu)
        m = sums / max(n_iter, 1)
        rep = EpochReport(k, mu, lr, float(m[1]), float(m[2]), float(m[0]), float(m[3]),
                          stats["mean_count"], stats["max_count"], stats["gini"],
                          time.perf_counter() - t0)
        self.reports.append(rep)
        self.epoch += 1
        return rep

    def final_selection(self) -> SelectionSet:
        """Selection against the current memory with the current model."""
        return select(self.memory, self.model.embed(self.x), self.cfg.selection_config())

    def run(self):
        while self.epoch < self.cfg.epochs:
            self.run_epoch()
        return self.model, self.reports


def train(target: FeatureTable, source: FeatureTable | None = None, cfg: TrainConfig | None = None):
    """Run the full schedule and return ``(model, epoch_reports)``."""
    return Trainer(target, source, cfg or TrainConfig()).run()


def iteration_log_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "iter", "L_s", "L_alpha", "L_beta", "combined"))
    for e, it, ls, la, lb, c in rows:
        w.writerow([e, it, repr(ls), repr(la), repr(lb), repr(c)])
    return buf.getvalue()


def config_fields() -> list:
    return [f.name for f in fields(TrainConfig)]

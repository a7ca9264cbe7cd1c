"""``ae-explore``: data generation, training, evaluation, sweeps, selection stats, ablations.

Training flags mirror :class:`TrainConfig` field for field and default to the
stock configuration; ``--profile desk`` switches the base to
:func:`experiments.desk_config` (explicit flags still win).

Every command writes ``run.manifest`` (``key=value`` lines) next to its main
output.  Exit codes: 0 ok, 2 usage, 3 missing/unreadable file, 4 invalid
configuration or data, 5 malformed file.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .data_io import SynthConfig, generate, read_table, split, write_table
from .errors import AEError, FormatError
from .evaluation import METRIC_FIELDS, MetricsReport, compare_runs, evaluate, metrics_csv
from .experiments import SWEEP_FIELDS, arm_config, desk_config, run_arm
from .model import load_model, save_model
from .selection import balance_weight
from .trainer import TrainConfig, Trainer, iteration_log_csv, reports_csv

EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_FORMAT = 2, 3, 4, 5

# flag name -> TrainConfig field; "lambda" is a keyword so the field is ``lam``
_FLAG_FIELD = {("lambda" if f.name == "lam" else f.name.replace("_", "-")): f.name
               for f in fields(TrainConfig)}
_BOOL_FIELDS = {"balanced", "skip_unwritten", "sample_with_replacement"}
_CHOICES = {
    "mu_mode": ("varying", "constant"),
    "selection_mode": ("adaptive", "top_k"),
    "memory_update_timing": ("per_iteration", "per_epoch"),
    "objective": ("ae", "triplet", "contrastive"),
    "init": ("glorot", "identity"),
}


def _float_tuple(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _int_tuple(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


class CliError(Exception):
    def __init__(self, code, msg):
        super().__init__(msg)
        self.code = code


def _add_train_flags(p):
    defaults = TrainConfig()
    p.add_argument("--profile", choices=("default", "desk"), default="default",
                   help="base configuration the flags below override")
    for flag, name in _FLAG_FIELD.items():
        default = getattr(defaults, name)
        dest = f"cfg_{name}"
        if name in _BOOL_FIELDS:
            g = p.add_mutually_exclusive_group()
            g.add_argument(f"--{flag}", dest=dest, action="store_const", const=True, default=None,
                           help=f"(default {default})")
            neg = "no-balance" if name == "balanced" else f"no-{flag}"
            g.add_argument(f"--{neg}", dest=dest, action="store_const", const=False)
        elif name == "hidden":
            p.add_argument(f"--{flag}", dest=dest, type=_int_tuple, default=None,
                           help="comma-separated hidden widths (default 64)")
        elif name == "layer_lr_scales":
            p.add_argument(f"--{flag}", dest=dest, type=_float_tuple, default=None,
                           help="comma-separated per-layer lr multipliers")
        else:
            typ = type(default) if default is not None else float
            p.add_argument(f"--{flag}", dest=dest, type=typ, default=None, metavar=name.upper(),
                           choices=_CHOICES.get(name), help=f"(default {default})")


def _resolve_config(args) -> TrainConfig:
    base = desk_config() if args.profile == "desk" else TrainConfig()
    over = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    cfg = replace(base, **over)
    cfg.validate()
    return cfg


def _read(path, what):
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_IO, f"{what}: cannot read {p}")
    try:
        return read_table(p)
    except OSError as exc:
        raise CliError(EXIT_IO, f"{what}: cannot read {p}: {exc}") from None
    except FormatError as exc:
        raise CliError(EXIT_FORMAT, f"{what}: {p}: {exc}") from None


def _ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _write_text(path, text):
    _ensure_parent(path)
    Path(path).write_text(text, encoding="utf-8")


def _fmt_value(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt_value(x) for x in v)
    return str(v)


def write_manifest(path, command, items):
    """``key=value`` lines; no timestamps so identical runs give identical bytes."""
    lines = [f"command={command}", f"version={__version__}", f"backend={BACKEND}"]
    lines += [f"{k}={_fmt_value(v)}" for k, v in items]
    _write_text(path, "\n".join(lines) + "\n")


def _manifest_path(args, main_output):
    return Path(args.manifest) if args.manifest else Path(main_output).parent / "run.manifest"


def _workers():
    raw = os.environ.get("AE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise CliError(EXIT_CONFIG, f"AE_THREADS must be an integer, got {raw!r}") from None


def _source_semantics(cfg, source):
    """Target-only runs force xi=1; xi=1 with a source ignores the source."""
    if source is None:
        return replace(cfg, xi=1.0), None
    if cfg.xi >= 1.0:
        warnings.warn("--xi 1 with --source: source domain ignored (target-only run)", stacklevel=2)
        return cfg, None
    return cfg, source


def _map(fn, jobs):
    n = _workers()
    if n == 1 or len(jobs) < 2:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _mean_report(reports):
    keys = ("rank1", "rank5", "rank10", "mAP")
    vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in keys}
    return MetricsReport(num_valid_queries=reports[0].num_valid_queries, per_query_ap=None, **vals)


# --- commands -----------------------------------------------------------

def cmd_gen_data(args):
    cfg = SynthConfig(identities=args.identities, images_per_identity=args.per_id,
                      cameras=args.cameras, dim=args.dim, sigma_within=args.sigma_within,
                      sigma_cam=args.sigma_cam, seed=args.seed)
    table = generate(cfg)
    _ensure_parent(args.out)
    write_table(table, args.out)
    items = [(f.name, getattr(cfg, f.name)) for f in fields(cfg)] + [("out", args.out)]
    if args.split_dir:
        d = Path(args.split_dir)
        d.mkdir(parents=True, exist_ok=True)
        train, query, gallery = split(table, args.query_fraction, seed=args.seed)
        write_table(train, d / "train.aeft")
        write_table(gallery, d / "gallery.aeft")
        if query is not None:
            write_table(query, d / "query.aeft")
        items += [("split_dir", d), ("query_fraction", args.query_fraction)]
    write_manifest(_manifest_path(args, args.out), "gen-data", items)
    print(f"wrote {len(table)} rows to {args.out}")


def _train_one(target, source, cfg, log_iterations=False):
    tr = Trainer(target, source, cfg, log_iterations=log_iterations)
    tr.run()
    return tr


def cmd_train(args):
    cfg = _resolve_config(args)
    target = _read(args.target, "target")
    cfg, source = _source_semantics(cfg, _read(args.source, "source"))
    tr = _train_one(target, source, cfg, log_iterations=bool(args.iter_log))
    _ensure_parent(args.out_model)
    save_model(tr.model, args.out_model)
    _write_text(args.report, reports_csv(tr.reports))
    if args.iter_log:
        _write_text(args.iter_log, iteration_log_csv(tr.iteration_log))
    items = list(cfg.as_dict().items()) + [("target", args.target), ("source", args.source),
                                           ("out_model", args.out_model), ("report", args.report)]
    write_manifest(_manifest_path(args, args.out_model), "train", items)
    last = tr.reports[-1]
    print(f"trained {cfg.epochs} epochs; final mean neighbor count {last.mean_count:.2f}")


def cmd_eval(args):
    query, gallery = _read(args.query, "query"), _read(args.gallery, "gallery")
    mpath = Path(args.model)
    if not mpath.is_file():
        raise CliError(EXIT_IO, f"model: cannot read {mpath}")
    try:
        model = load_model(mpath)
    except FormatError as exc:
        raise CliError(EXIT_FORMAT, f"model: {mpath}: {exc}") from None
    rep = evaluate(model, query, gallery, cross_camera_filter=not args.no_cross_camera_filter)
    _write_text(args.out, metrics_csv({args.arm: rep}))
    write_manifest(_manifest_path(args, args.out), "eval",
                   [("model", args.model), ("query", args.query), ("gallery", args.gallery),
                    ("cross_camera_filter", not args.no_cross_camera_filter), ("out", args.out)])
    print(f"rank1={rep.rank1:.4f} mAP={rep.mAP:.4f} valid={rep.num_valid_queries}")


SWEEP_COLUMNS = ("param", "value") + METRIC_FIELDS + ("mean_count", "max_count", "gini")


def cmd_sweep(args):
    base = _resolve_config(args)
    target, query, gallery = (_read(args.target, "target"), _read(args.query, "query"),
                              _read(args.gallery, "gallery"))
    base, source = _source_semantics(base, _read(args.source, "source"))
    if args.param not in SWEEP_FIELDS:
        raise CliError(EXIT_USAGE, f"--param must be one of {sorted(SWEEP_FIELDS)}")
    values = _float_tuple(args.values)
    if not values:
        raise CliError(EXIT_USAGE, "--values is empty")
    fld = SWEEP_FIELDS[args.param]
    arm = args.arm
    jobs = [(arm, replace(base, **{fld: v}), target, query, gallery, source) for v in values]
    for _, cfg, *_ in jobs:
        arm_config(arm, cfg)  # validate before spending any time
    results = _map(run_arm, jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for v, res in zip(values, results):
        m, last = res.metrics, res.final
        w.writerow([args.param, repr(v)] + [getattr(m, k) if k == "num_valid_queries" else f"{getattr(m, k):.6f}"
                                           for k in METRIC_FIELDS]
                   + [f"{last.mean_count:.6f}", last.max_count, f"{last.gini:.6f}"])
    _write_text(args.out, buf.getvalue())
    items = list(base.as_dict().items()) + [("param", args.param), ("values", values), ("arm", arm),
                                            ("target", args.target), ("query", args.query),
                                            ("gallery", args.gallery), ("out", args.out)]
    write_manifest(_manifest_path(args, args.out), "sweep", items)
    print(buf.getvalue(), end="")


def cmd_stats(args):
    cfg = _resolve_config(args)
    target = _read(args.target, "target")
    cfg, source = _source_semantics(cfg, _read(args.source, "source"))
    tr = _train_one(target, source, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "image_index", "count", "balance_weight"))
    for epoch, sel in enumerate(tr.selections):
        if args.last_only and epoch != len(tr.selections) - 1:
            continue
        for i, c in enumerate(sel.counts):
            w.writerow([epoch, i, int(c), repr(balance_weight(int(c)))])
    _write_text(args.out, buf.getvalue())
    write_manifest(_manifest_path(args, args.out), "stats",
                   list(cfg.as_dict().items()) + [("target", args.target), ("out", args.out)])
    last = tr.reports[-1]
    print(f"final epoch: mean count {last.mean_count:.3f}, max {last.max_count}, gini {last.gini:.4f}")


def cmd_ablate(args):
    base = _resolve_config(args)
    target, query, gallery = (_read(args.target, "target"), _read(args.query, "query"),
                              _read(args.gallery, "gallery"))
    base, source = _source_semantics(base, _read(args.source, "source"))
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    if not arms:
        raise CliError(EXIT_USAGE, "--arms is empty")
    seeds = _int_tuple(args.seeds) if args.seeds else (base.seed,)
    deltas = {}
    for spec in (args.arm_delta or []):
        name, _, val = spec.rpartition("=")
        if not name:
            raise CliError(EXIT_USAGE, f"--arm-delta expects ARM=VALUE, got {spec!r}")
        deltas[name] = float(val)
    jobs = []
    for a in arms:
        cfg = replace(base, delta=deltas.get(a, base.delta))
        arm_config(a, cfg)
        jobs += [(a, replace(cfg, seed=s), target, query, gallery, source) for s in seeds]
    results = _map(run_arm, jobs)
    per_arm = {}
    for (a, *_), res in zip(jobs, results):
        per_arm.setdefault(a, []).append(res.metrics)
    reports = {a: _mean_report(per_arm[a]) for a in arms}
    text = compare_runs(reports) if len(reports) > 1 else metrics_csv(reports)
    _write_text(args.out, text)
    items = list(base.as_dict().items()) + [("arms", arms), ("seeds", seeds),
                                            ("arm_delta", [f"{k}={v!r}" for k, v in deltas.items()]),
                                            ("target", args.target), ("query", args.query),
                                            ("gallery", args.gallery), ("out", args.out)]
    write_manifest(_manifest_path(args, args.out), "ablate", items)
    print(text, end="")


# --- parser -------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ae-explore", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--manifest", help="manifest path (default: run.manifest beside the output)")

    g = sub.add_parser("gen-data", help="write a synthetic identity-cluster table")
    g.add_argument("--out", required=True)
    g.add_argument("--identities", type=int, default=40)
    g.add_argument("--per-id", type=int, default=18)
    g.add_argument("--cameras", type=int, default=6)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--sigma-within", type=float, default=0.25)
    g.add_argument("--sigma-cam", type=float, default=0.15)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split-dir", help="also write train/query/gallery tables here")
    g.add_argument("--query-fraction", type=float, default=0.2)
    common(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train an embedding model")
    t.add_argument("--target", required=True)
    t.add_argument("--source")
    t.add_argument("--out-model", required=True)
    t.add_argument("--report", required=True, help="per-epoch report CSV")
    t.add_argument("--iter-log", help="per-iteration loss CSV")
    _add_train_flags(t)
    common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="CMC / mAP of a model on query vs gallery")
    e.add_argument("--model", required=True)
    e.add_argument("--query", required=True)
    e.add_argument("--gallery", required=True)
    e.add_argument("--no-cross-camera-filter", action="store_true")
    e.add_argument("--arm", default="model", help="row label in the metrics CSV")
    e.add_argument("--out", required=True)
    common(e)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate once per hyper-parameter value")
    s.add_argument("--param", required=True, choices=sorted(SWEEP_FIELDS))
    s.add_argument("--values", required=True)
    s.add_argument("--arm", default="adaptive+balance")
    for name in ("target", "query", "gallery"):
        s.add_argument(f"--{name}", required=True)
    s.add_argument("--source")
    s.add_argument("--out", required=True)
    _add_train_flags(s)
    common(s)
    s.set_defaults(func=cmd_sweep)

    st = sub.add_parser("stats", help="train and dump per-epoch neighbor counts")
    st.add_argument("--target", required=True)
    st.add_argument("--source")
    st.add_argument("--out", required=True)
    st.add_argument("--last-only", action="store_true")
    _add_train_flags(st)
    common(st)
    st.set_defaults(func=cmd_stats)

    a = sub.add_parser("ablate", help="compare arms on shared data and seeds")
    a.add_argument("--arms", required=True,
                   help="comma list of adaptive+balance, adaptive, topk:K, triplet, contrastive, mu-const")
    a.add_argument("--seeds", help="comma list of training seeds (default: --seed)")
    a.add_argument("--arm-delta", action="append", metavar="ARM=VALUE",
                   help="per-arm delta override, repeatable")
    for name in ("target", "query", "gallery"):
        a.add_argument(f"--{name}", required=True)
    a.add_argument("--source")
    a.add_argument("--out", required=True)
    _add_train_flags(a)
    common(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # "--values -1,0" would otherwise parse as an unknown option
    for i, tok in enumerate(argv[:-1]):
        if tok == "--values":
            argv[i:i + 2] = [f"--values={argv[i + 1]}"]
            break
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda m, *a, **k: print(f"warning: {m}", file=sys.stderr)
            args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (AEError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())

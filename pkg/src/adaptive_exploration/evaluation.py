"""Single-query retrieval metrics (CMC rank-k and mAP)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core_numeric import cosine_matrix
from .data_io import FeatureTable
from .errors import DimensionMismatch, NoValidQueries

METRIC_FIELDS = ("rank1", "rank5", "rank10", "mAP", "num_valid_queries")


@dataclass
class MetricsReport:
    rank1: float
    rank5: float
    rank10: float
    mAP: float
    num_valid_queries: int
    per_query_ap: list | None = field(default=None, repr=False)

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def rank_gallery(sims: np.ndarray) -> np.ndarray:
    """Gallery order per query: descending similarity, ties by ascending index."""
    return np.argsort(-sims, axis=1, kind="stable")


def evaluate_features(q_feat, q_ids, q_cams, g_feat, g_ids, g_cams,
                      cross_camera_filter: bool = True, keep_per_query: bool = False) -> MetricsReport:
    q_ids = np.asarray(q_ids, dtype=np.int64)
    if np.any(q_ids < 0):
        raise ValueError("query identities must be known (>= 0)")
    sims = cosine_matrix(q_feat, g_feat)
    order = rank_gallery(sims)
    ap, first = _kernels.rank_scan(order, q_ids, q_cams, g_ids, g_cams, cross_camera_filter)
    valid = first >= 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoValidQueries("no query has a remaining gallery match")
    hit = first[valid]
    return MetricsReport(
        rank1=float(np.mean(hit < 1)),
        rank5=float(np.mean(hit < 5)),
        rank10=float(np.mean(hit < 10)),
        mAP=float(np.mean(ap[valid])),
        num_valid_queries=n_valid,
        per_query_ap=[float(a) if v else None for a, v in zip(ap, valid)] if keep_per_query else None,
    )


def evaluate(model, query: FeatureTable, gallery: FeatureTable, cross_camera_filter: bool = True,
             keep_per_query: bool = False) -> MetricsReport:
    """Embed query and gallery with ``model`` (``None`` = raw features) and score retrieval."""
    if query.dim != gallery.dim:
        raise DimensionMismatch("query and gallery feature dims differ")
    if model is not None:
        if query.dim != model.d_in:
            raise DimensionMismatch(f"model expects dim {model.d_in}, tables have {query.dim}")
        qf, gf = model.embed(query.features), model.embed(gallery.features)
    else:
        qf, gf = query.features.astype(np.float64), gallery.features.astype(np.float64)
    return evaluate_features(qf, query.ids, query.cameras, gf, gallery.ids, gallery.cameras,
                             cross_camera_filter, keep_per_query)


def metrics_csv(rows: dict) -> str:
    """``arm,rank1,rank5,rank10,mAP,num_valid_queries`` for each arm."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("arm",) + METRIC_FIELDS)
    for arm, rep in rows.items():
        w.writerow([arm] + [_fmt(getattr(rep, k)) for k in METRIC_FIELDS])
    return buf.getvalue()


def _fmt(v):
    return v if isinstance(v, (int, np.integer)) else f"{v:.6f}"


def compare_runs(reports: dict) -> str:
    """Per-arm metrics followed by pairwise deltas (later arm minus earlier)."""
    if len(reports) < 2:
        raise ValueError("need at least two arms to compare")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("arm", "vs") + METRIC_FIELDS)
    arms = list(reports)
    for a in arms:
        w.writerow([a, ""] + [_fmt(getattr(reports[a], k)) for k in METRIC_FIELDS])
    for i, a in enumerate(arms):
        for b in arms[i + 1:]:
            ra, rb = reports[a], reports[b]
            w.writerow([b, a] + [_fmt(getattr(rb, k) - getattr(ra, k)) for k in METRIC_FIELDS])
    return buf.getvalue()

"""Scene-graph detection metrics: R@K, mR@K, zR@K, wmAP (relation and
phrase) and the weighted Open Images score.

Inputs are per-image lists: ground truth as :class:`GroundTruthTriplet`,
predictions as :class:`RankedTriplet` sorted by score (descending).
Internally every metric is a fraction in [0, 1]; callers scale by 100.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
import math
from typing import Iterable, Sequence

import numpy as np

from .geometry import paired_iou, paired_union_box
from .matching import hungarian
from .types import GroundTruthTriplet, RankedTriplet, triplet_score

IOU_THRESHOLD = 0.5
DEFAULT_KS = (20, 50, 100)

__all__ = [
    "triplet_match", "recall_at_k", "mean_recall_at_k", "zero_shot_recall_at_k", "wmap",
    "average_precision", "weighted_score", "triplet_score", "evaluate", "MetricsReport",
]


def _overlap(pred: RankedTriplet, gt: GroundTruthTriplet, mode: str) -> float:
    if mode == "rel":
        return float(min(paired_iou(pred.sub_box, gt.sub_box), paired_iou(pred.obj_box, gt.obj_box)))
    if mode == "phr":
        return float(paired_iou(paired_union_box(pred.sub_box, pred.obj_box),
                                paired_union_box(gt.sub_box, gt.obj_box)))
    raise ValueError(f"unknown match mode {mode!r}")


def triplet_match(pred: RankedTriplet, gt: GroundTruthTriplet, mode: str = "rel",
                  threshold: float = IOU_THRESHOLD) -> bool:
    """Labels all equal and boxes overlapping by at least ``threshold``.

    ``rel`` checks subject and object IoU separately; ``phr`` checks the IoU
    of the two union boxes.
    """
    if pred.labels != gt.labels:
        return False
    return _overlap(pred, gt, mode) >= threshold


def apply_graph_constraint(preds: Sequence[RankedTriplet]) -> list[RankedTriplet]:
    """Keep only the best-ranked predicate per (subject box, object box) pair."""
    seen = set()
    out = []
    for p in preds:
        key = (tuple(np.round(p.sub_box, 12)), tuple(np.round(p.obj_box, 12)))
        if key in seen:
            continue
        seen.add(key)
        out.append(p)
    return out


def _top_k(preds, k, graph_constraint):
    if graph_constraint:
        preds = apply_graph_constraint(preds)
    return list(preds)[:k]


def gt_hits(preds: Sequence[RankedTriplet], gts: Sequence[GroundTruthTriplet], mode: str = "rel",
            one_to_one: bool = False) -> np.ndarray:
    """Boolean per GT: recalled by the given predictions.

    By default a GT counts once if any prediction matches it. With
    ``one_to_one`` each prediction may recall at most one GT, and the
    number of recalled GTs is a maximum bipartite matching.
    """
    hits = np.zeros(len(gts), dtype=bool)
    if not gts or not preds:
        return hits
    m = np.array([[triplet_match(p, g, mode) for g in gts] for p in preds])
    if not one_to_one:
        return m.any(axis=0)
    rows = np.flatnonzero(m.any(axis=1))
    if len(rows) == 0:
        return hits
    sub = m[rows]
    for r, c in hungarian(-sub.astype(float)):
        if sub[r, c]:
            hits[c] = True
    return hits


def recall_at_k(preds_per_image, gts_per_image, k: int, graph_constraint: bool = True,
                micro: bool = False, one_to_one: bool = False) -> float:
    """Fraction of GT triplets recalled by each image's top-``k`` predictions.

    Macro (default) averages per-image recalls over images with GT; micro
    pools all GT triplets. Returns NaN when there is no GT at all. Sums are
    exactly rounded, so the result does not depend on image order.
    """
    hit_total, gt_total, per_image = 0, 0, []
    for preds, gts in zip(preds_per_image, gts_per_image):
        if not gts:
            continue
        h = gt_hits(_top_k(preds, k, graph_constraint), gts, "rel", one_to_one)
        hit_total += int(h.sum())
        gt_total += len(gts)
        per_image.append(int(h.sum()) / len(gts))
    if gt_total == 0:
        return math.nan
    return hit_total / gt_total if micro else math.fsum(per_image) / len(per_image)


def per_category_recall(preds_per_image, gts_per_image, k: int, graph_constraint: bool = True,
                        one_to_one: bool = False) -> dict[int, tuple[int, int]]:
    """``predicate -> (hits, total)`` pooled over images."""
    table: dict[int, list[int]] = defaultdict(lambda: [0, 0])
    for preds, gts in zip(preds_per_image, gts_per_image):
        if not gts:
            continue
        h = gt_hits(_top_k(preds, k, graph_constraint), gts, "rel", one_to_one)
        for g, hit in zip(gts, h):
            table[g.predicate][0] += int(hit)
            table[g.predicate][1] += 1
    return {c: (v[0], v[1]) for c, v in sorted(table.items())}


def mean_recall_at_k(preds_per_image, gts_per_image, k: int, graph_constraint: bool = True,
                     one_to_one: bool = False) -> float:
    """Unweighted mean over predicate categories present in GT of pooled recall."""
    table = per_category_recall(preds_per_image, gts_per_image, k, graph_constraint, one_to_one)
    if not table:
        return math.nan
    return math.fsum(h / t for h, t in table.values()) / len(table)


def zero_shot_recall_at_k(preds_per_image, gts_per_image, k: int, seen: Iterable[tuple[int, int, int]],
                          graph_constraint: bool = True, one_to_one: bool = False) -> float:
    """Pooled recall over GT triplets whose (subject, predicate, object) labels
    never occur in ``seen``. NaN when no such GT exists."""
    seen = {tuple(int(v) for v in s) for s in seen}
    hit_total = gt_total = 0
    for preds, gts in zip(preds_per_image, gts_per_image):
        unseen = [g for g in gts if g.labels not in seen]
        if not unseen:
            continue
        # matching is computed against the full GT list, then restricted
        h = gt_hits(_top_k(preds, k, graph_constraint), gts, "rel", one_to_one)
        for g, hit in zip(gts, h):
            if g.labels not in seen:
                hit_total += int(hit)
                gt_total += 1
    return hit_total / gt_total if gt_total else math.nan


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """Area under the monotone precision envelope of a ranked TP/FP list."""
    if num_gt <= 0:
        raise ValueError("average precision needs at least one ground truth")
    tp = np.asarray(tp, dtype=float)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def per_category_ap(preds_per_image, gts_per_image, mode: str = "rel") -> dict[int, tuple[float, int]]:
    """``predicate -> (AP, number of GT)`` for every predicate present in GT."""
    n_gt: dict[int, int] = defaultdict(int)
    for gts in gts_per_image:
        for g in gts:
            n_gt[g.predicate] += 1
    ranked: dict[int, list] = defaultdict(list)
    for img, preds in enumerate(preds_per_image):
        for j, p in enumerate(preds):
            if p.predicate in n_gt:
                ranked[p.predicate].append((-p.score, img, j, p))
    out = {}
    for c in sorted(n_gt):
        used = [np.zeros(len(g), dtype=bool) for g in gts_per_image]
        tp = []
        for _, img, _, p in sorted(ranked[c], key=lambda t: t[:3]):
            best, best_ov = -1, -1.0
            for gi, g in enumerate(gts_per_image[img]):
                if used[img][gi] or g.predicate != c or g.labels != p.labels:
                    continue
                ov = _overlap(p, g, mode)
                if ov >= IOU_THRESHOLD and ov > best_ov:
                    best, best_ov = gi, ov
            if best >= 0:
                used[img][best] = True
            tp.append(best >= 0)
        out[c] = (average_precision(tp, n_gt[c]), n_gt[c])
    return out


def wmap(preds_per_image, gts_per_image, mode: str = "rel") -> float:
    """Predicate APs weighted by each predicate's share of GT triplets."""
    table = per_category_ap(preds_per_image, gts_per_image, mode)
    if not table:
        return math.nan
    total = sum(n for _, n in table.values())
    return float(sum(ap * n / total for ap, n in table.values()))


def weighted_score(r50: float, wmap_rel: float, wmap_phr: float) -> float:
    """Open Images score on whatever scale the inputs use (percent in tables)."""
    return 0.2 * r50 + 0.4 * wmap_rel + 0.4 * wmap_phr


@dataclass
class MetricsReport:
    recall: dict[int, float]
    mean_recall: dict[int, float]
    zero_shot_recall: dict[int, float]
    wmap_rel: float
    wmap_phr: float
    score: float
    per_category: dict[int, dict] = field(default_factory=dict)
    profile: str = "vg"

    def as_percent(self) -> dict:
        def pct(v):
            return None if v is None or (isinstance(v, float) and math.isnan(v)) else round(100 * v, 6)
        return {
            "profile": self.profile,
            "R": {str(k): pct(v) for k, v in self.recall.items()},
            "mR": {str(k): pct(v) for k, v in self.mean_recall.items()},
            "zR": {str(k): pct(v) for k, v in self.zero_shot_recall.items()},
            "wmAP_rel": pct(self.wmap_rel),
            "wmAP_phr": pct(self.wmap_phr),
            "score": pct(self.score),
            "per_category": {str(c): {k: (pct(v) if k in ("recall", "ap_rel", "ap_phr") else v)
                                      for k, v in row.items()}
                             for c, row in self.per_category.items()},
        }


def evaluate(preds_per_image, gts_per_image, ks: Sequence[int] = DEFAULT_KS, profile: str = "vg",
             seen=None, graph_constraint: bool | None = None) -> MetricsReport:
    """All metrics at once. ``profile`` picks macro (vg) or micro (oi) recall."""
    if profile not in ("vg", "oi"):
        raise ValueError(f"unknown profile {profile!r}")
    gc = (profile == "vg") if graph_constraint is None else graph_constraint
    micro = profile == "oi"
    ks = sorted(set(int(k) for k in ks) | {50})
    rec = {k: recall_at_k(preds_per_image, gts_per_image, k, gc, micro) for k in ks}
    mrec = {k: mean_recall_at_k(preds_per_image, gts_per_image, k, gc) for k in ks}
    zrec = {k: (zero_shot_recall_at_k(preds_per_image, gts_per_image, k, seen, gc)
                if seen is not None else math.nan) for k in ks}
    ap_rel = per_category_ap(preds_per_image, gts_per_image, "rel")
    ap_phr = per_category_ap(preds_per_image, gts_per_image, "phr")
    wr, wp = wmap(preds_per_image, gts_per_image, "rel"), wmap(preds_per_image, gts_per_image, "phr")
    k_cat = 50
    cat_rec = per_category_recall(preds_per_image, gts_per_image, k_cat, gc)
    per_cat = {c: {"num_gt": t, "recall": h / t, "ap_rel": ap_rel[c][0], "ap_phr": ap_phr[c][0]}
               for c, (h, t) in cat_rec.items()}
    score = weighted_score(rec[50], wr, wp)
    return MetricsReport(rec, mrec, zrec, wr, wp, score, per_cat, profile)

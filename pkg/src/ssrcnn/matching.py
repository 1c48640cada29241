"""Rectangular Hungarian assignment and the two matching-cost assemblers."""
from __future__ import annotations

from typing import TYPE_CHECKING, Sequence

import numpy as np

from .geometry import pairwise_giou
from .losses import Criterion, box_losses, focal_cost_matrix, focal_loss
from .types import GroundTruthTriplet, PredictionSet, TripletPrediction

if TYPE_CHECKING:
    from .assignment import PseudoPair


class CostMatrixError(ValueError):
    pass


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of ``min(rows, cols)`` pairs.

    Shortest-augmenting-path Hungarian method with row/column potentials,
    O(n^2 m). Rows are inserted in ascending order and every column scan
    takes the lowest-index minimum, so ties resolve deterministically.
    Returns ``(row, col)`` pairs sorted by row.
    """
    a = np.asarray(cost, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise CostMatrixError(f"cost matrix must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise CostMatrixError("cost matrix has non-finite entries")
    transposed = a.shape[0] > a.shape[1]
    if transposed:
        a = a.T
    n, m = a.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) owning column j, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    pairs = [(int(p[j]) - 1, j - 1) for j in range(1, m + 1) if p[j]]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def matching_cost(cost, pairs) -> float:
    a = np.asarray(cost, dtype=np.float64)
    return float(sum(a[r, c] for r, c in pairs))


# ----------------------------------------------------------------------------
# stage 1: predictions vs ground-truth triplets

def stage1_cost(pred: TripletPrediction, gt: GroundTruthTriplet, crit: Criterion = Criterion()) -> float:
    """Ground-truth matching cost of one prediction; also its training loss."""
    c = crit.coeffs
    total = 0.0
    for logits, target, weight, focal in (
            (pred.rel_logits, gt.predicate, c.cls_rel, crit.rel_focal),
            (pred.sub_logits, gt.sub_label, c.cls_obj, crit.obj_focal),
            (pred.obj_logits, gt.obj_label, c.cls_obj, crit.obj_focal)):
        if crit.cls_cost == "full":
            total += weight * focal_loss(logits, target, focal)[0]
        else:
            total += weight * focal_cost_matrix(np.asarray(logits)[None], [target], focal, "target")[0, 0]
    for pb, gb in ((pred.sub_box, gt.sub_box), (pred.obj_box, gt.obj_box)):
        l1, gl, _, _ = box_losses(pb, gb)
        total += c.l1 * l1 + c.giou * gl
    return float(total)


def _l1_matrix(a, b):
    return np.abs(np.asarray(a)[:, None, :] - np.asarray(b)[None, :, :]).sum(-1)


def stage1_cost_matrix(preds: PredictionSet, gts: Sequence[GroundTruthTriplet],
                       crit: Criterion = Criterion()) -> np.ndarray:
    """``(N, G)`` matrix of :func:`stage1_cost`, vectorized."""
    c = crit.coeffs
    if not gts:
        return np.zeros((len(preds), 0))
    sb = np.array([g.sub_box for g in gts])
    ob = np.array([g.obj_box for g in gts])
    cost = c.cls_rel * focal_cost_matrix(preds.rel_logits, [g.predicate for g in gts], crit.rel_focal, crit.cls_cost)
    cost += c.cls_obj * focal_cost_matrix(preds.sub_logits, [g.sub_label for g in gts], crit.obj_focal, crit.cls_cost)
    cost += c.cls_obj * focal_cost_matrix(preds.obj_logits, [g.obj_label for g in gts], crit.obj_focal, crit.cls_cost)
    cost += c.l1 * (_l1_matrix(preds.sub_boxes, sb) + _l1_matrix(preds.obj_boxes, ob))
    cost += c.giou * ((1 - pairwise_giou(preds.sub_boxes, sb)) + (1 - pairwise_giou(preds.obj_boxes, ob)))
    return cost


# ----------------------------------------------------------------------------
# stage 2: leftover predictions vs pseudo pairs

def stage2_cost(pred: TripletPrediction, pseudo: "PseudoPair", crit: Criterion = Criterion()) -> float:
    """Pseudo-pair matching cost; classification enters only for GT-hitting objects."""
    c = crit.coeffs
    total = 0.0
    for pb, logits, po in ((pred.sub_box, pred.sub_logits, pseudo.sub), (pred.obj_box, pred.obj_logits, pseudo.obj)):
        l1, gl, _, _ = box_losses(pb, po.box)
        total += c.pseudo_l1 * l1 + c.pseudo_giou * gl
        if po.hit:
            if crit.cls_cost == "full":
                total += c.pseudo_cls * focal_loss(logits, po.label, crit.obj_focal)[0]
            else:
                total += c.pseudo_cls * focal_cost_matrix(np.asarray(logits)[None], [po.label],
                                                          crit.obj_focal, "target")[0, 0]
    return float(total)


def stage2_cost_matrix(preds: PredictionSet, pseudo: Sequence["PseudoPair"],
                       crit: Criterion = Criterion()) -> np.ndarray:
    """``(N, P)`` matrix of :func:`stage2_cost`, vectorized."""
    c = crit.coeffs
    if not pseudo:
        return np.zeros((len(preds), 0))
    cost = np.zeros((len(preds), len(pseudo)))
    for boxes, logits, role in ((preds.sub_boxes, preds.sub_logits, "sub"), (preds.obj_boxes, preds.obj_logits, "obj")):
        objs = [getattr(p, role) for p in pseudo]
        tb = np.array([o.box for o in objs])
        hit = np.array([float(o.hit) for o in objs])
        cost += c.pseudo_l1 * _l1_matrix(boxes, tb) + c.pseudo_giou * (1 - pairwise_giou(boxes, tb))
        labels = [o.label if o.hit else None for o in objs]
        cls = focal_cost_matrix(logits, labels, crit.obj_focal, crit.cls_cost)
        cost += c.pseudo_cls * cls * hit[None, :]
    return cost

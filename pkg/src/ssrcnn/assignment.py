"""Two-stage triplet label assignment.

Stage 1 matches every ground-truth triplet to a prediction. The leftover
predictions are then matched, as object pairs, against a pseudo-label set
built from ordered pairs of auxiliary detections; whatever is still left
is supervised as a background relation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Sequence

import numpy as np

from .geometry import check_boxes, pairwise_giou
from .losses import Criterion, focal_cost_matrix
from .matching import hungarian, stage1_cost_matrix, stage2_cost_matrix
from .types import GroundTruthTriplet, PredictionSet, SceneGraph

log = logging.getLogger(__name__)

MODES = ("pseudo", "full_bg", "no_bg")


class AssignmentConfigError(ValueError):
    pass


@dataclass
class AuxDetection:
    """One detection from the auxiliary object detector."""
    box: np.ndarray  # (4,) cxcywh
    logits: np.ndarray  # (C_obj,)
    matched_gt: int | None = None

    def __post_init__(self):
        self.box = check_boxes(np.asarray(self.box, dtype=np.float64).reshape(4))
        self.logits = np.asarray(self.logits, dtype=np.float64)

    @property
    def label(self) -> int:
        return int(np.argmax(self.logits))


@dataclass(frozen=True)
class PseudoObject:
    box: np.ndarray
    label: int | None  # None = background hard label
    hit: bool
    det_index: int
    gt_index: int | None = None


@dataclass(frozen=True)
class PseudoPair:
    sub: PseudoObject
    obj: PseudoObject


@dataclass
class AssignmentResult:
    stage1: list[tuple[int, int]]  # (prediction, GT triplet)
    stage2: list[tuple[int, int]]  # (prediction, pseudo pair)
    background: list[int]
    gt_triplets: list[GroundTruthTriplet] = field(default_factory=list)
    pseudo_pairs: list[PseudoPair] = field(default_factory=list)
    k_min: int | None = None
    num_candidates: int = 0
    stage1_costs: list[float] = field(default_factory=list)
    stage2_costs: list[float] = field(default_factory=list)

    @property
    def pool_size(self) -> int:
        return len(self.pseudo_pairs)

    def to_dict(self) -> dict:
        return {
            "stage1": [{"pred": int(i), "gt": int(j), "cost": float(c)}
                       for (i, j), c in zip(self.stage1, self.stage1_costs)],
            "stage2": [{"pred": int(i), "pseudo": int(j), "cost": float(c)}
                       for (i, j), c in zip(self.stage2, self.stage2_costs)],
            "background": [int(i) for i in self.background],
            "k_min": self.k_min,
            "pool_size": self.pool_size,
            "num_candidates": int(self.num_candidates),
            "pseudo_pairs": [
                {"sub_det": p.sub.det_index, "obj_det": p.obj.det_index,
                 "sub_label": p.sub.label, "obj_label": p.obj.label,
                 "sub_hit": bool(p.sub.hit), "obj_hit": bool(p.obj.hit)}
                for p in self.pseudo_pairs],
        }


def assign_aux_labels(aux: Sequence[AuxDetection], scene: SceneGraph,
                      crit: Criterion = Criterion()) -> list[AuxDetection]:
    """Stand-in for the auxiliary detector's own label assignment.

    Hungarian match of detections to GT objects under focal + L1 + GIoU cost
    with the ground-truth-stage weights. Returns copies with ``matched_gt``
    set (``None`` for detections left unmatched).
    """
    out = [AuxDetection(d.box, d.logits, None) for d in aux]
    if not out or scene.num_objects == 0:
        return out
    c = crit.coeffs
    boxes = np.array([d.box for d in out])
    logits = np.array([d.logits for d in out])
    cost = c.cls_obj * focal_cost_matrix(logits, [int(l) for l in scene.labels], crit.obj_focal, crit.cls_cost)
    cost += c.l1 * np.abs(boxes[:, None, :] - scene.boxes[None, :, :]).sum(-1)
    cost += c.giou * (1 - pairwise_giou(boxes, scene.boxes))
    for r, g in hungarian(cost):
        out[r].matched_gt = g
    return out


def build_pseudo_set(aux: Sequence[AuxDetection], scene: SceneGraph) -> list[PseudoPair]:
    """Ordered detection pairs with GT replacement, minus annotated GT pairs.

    Detections matched to a GT object carry that object's box and label
    (hit flag set); the rest keep their own box with a background label.
    A pair is dropped when its two members match the subject and object of
    an annotated relation, in that order.
    """
    if not aux:
        raise ValueError("pseudo-label set needs at least one auxiliary detection")
    annotated = scene.annotated_pairs()
    objs = []
    for k, d in enumerate(aux):
        g = d.matched_gt
        if g is not None:
            if not (0 <= g < scene.num_objects):
                raise ValueError(f"detection {k} matched to missing GT object {g}")
            objs.append(PseudoObject(scene.boxes[g].copy(), int(scene.labels[g]), True, k, int(g)))
        else:
            objs.append(PseudoObject(d.box.copy(), None, False, k, None))
    pairs = []
    for i, si in enumerate(objs):
        for j, oj in enumerate(objs):
            if i == j:
                continue
            if si.hit and oj.hit and (si.gt_index, oj.gt_index) in annotated:
                continue
            pairs.append(PseudoPair(si, oj))
    return pairs


def candidate_count(order: np.ndarray, k: int) -> int:
    return len(np.unique(order[:, :k]))


def reduce_candidates(cost: np.ndarray) -> tuple[int, np.ndarray]:
    """Smallest ``K`` whose per-row top-``K`` union exceeds the row count.

    ``cost`` is ``(M, P)``: M leftover predictions against the full pseudo
    pool. Returns ``(K_min, sorted candidate columns)``. Binary search is
    valid because the union size is nondecreasing in ``K``. If ``P <= M``
    the threshold is unreachable and the whole pool is returned with
    ``K_min = P``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    m, p = cost.shape
    if p == 0 or m == 0:
        return 0, np.arange(0)
    if p <= m:
        return p, np.arange(p)
    order = np.argsort(cost, axis=1, kind="stable")
    lo, hi = 1, p  # candidate_count(order, p) == p > m
    while lo < hi:
        mid = (lo + hi) // 2
        if candidate_count(order, mid) > m:
            hi = mid
        else:
            lo = mid + 1
    return lo, np.unique(order[:, :lo])


def two_stage_assign(preds: PredictionSet, scene: SceneGraph, aux: Sequence[AuxDetection],
                     crit: Criterion = Criterion(), aux_assigned: bool = False) -> AssignmentResult:
    """Route every prediction slot to a GT triplet, a pseudo pair or background.

    With ``crit.mode`` other than ``"pseudo"`` the second stage is skipped
    and all leftovers become background (``full_bg`` / ``no_bg`` ablations).
    Pass ``aux_assigned=True`` if ``aux[k].matched_gt`` is already final.
    """
    if crit.mode not in MODES:
        raise AssignmentConfigError(f"unknown assignment mode {crit.mode!r}")
    gts = scene.triplets()
    n = len(preds)
    if n < len(gts):
        raise AssignmentConfigError(f"{n} prediction slots cannot cover {len(gts)} GT triplets")

    stage1, costs1 = [], []
    if gts:
        c1 = stage1_cost_matrix(preds, gts, crit)
        stage1 = hungarian(c1)
        costs1 = [float(c1[i, j]) for i, j in stage1]
    taken = {i for i, _ in stage1}
    remaining = [i for i in range(n) if i not in taken]

    pseudo: list[PseudoPair] = []
    stage2, costs2 = [], []
    k_min, n_cand = None, 0
    if crit.mode == "pseudo" and aux:
        labelled = list(aux) if aux_assigned else assign_aux_labels(aux, scene, crit)
        pseudo = build_pseudo_set(labelled, scene)
    if pseudo and remaining:
        c2 = stage2_cost_matrix(preds.take(remaining), pseudo, crit)
        k_min, cand = reduce_candidates(c2)
        n_cand = len(cand)
        sub = c2[:, cand]
        for r, c in hungarian(sub):
            stage2.append((remaining[r], int(cand[c])))
            costs2.append(float(sub[r, c]))
        stage2.sort()
        costs2 = [float(c2[remaining.index(i), j]) for i, j in stage2]
    matched2 = {i for i, _ in stage2}
    background = [i for i in remaining if i not in matched2]
    log.debug("assignment: %d stage-1, %d stage-2, %d background, |U|=%d, K=%s, C=%d",
              len(stage1), len(stage2), len(background), len(pseudo), k_min, n_cand)
    return AssignmentResult(stage1, stage2, background, gts, pseudo, k_min, n_cand, costs1, costs2)

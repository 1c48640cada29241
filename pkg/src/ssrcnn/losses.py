"""Focal, L1 and GIoU losses with analytic gradients, and the assembled
triplet losses for ground-truth matches and pseudo-label / background slots.

Classification is sigmoid-per-class; background means every class is a
negative. Box gradients are taken with respect to ``(cx, cy, w, h)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import expit

from .geometry import check_boxes, cxcywh_to_xyxy

if TYPE_CHECKING:
    from .assignment import AssignmentResult
    from .types import PredictionSet

BACKGROUND = None


@dataclass(frozen=True)
class LossCoefficients:
    """Loss weights. Defaults are the published training values."""
    cls_rel: float = 4 / 3
    cls_obj: float = 4 / 3
    l1: float = 5.0
    giou: float = 2.0
    pseudo_cls: float = 1 / 3
    pseudo_l1: float = 5 / 4
    pseudo_giou: float = 1 / 2

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if v < 0:
                raise ValueError(f"coefficient {k} must be nonnegative, got {v}")


@dataclass(frozen=True)
class FocalParams:
    """``gamma`` is a scalar or a per-class array (see :func:`adaptive_gamma`)."""
    alpha: float = 0.25
    gamma: float | np.ndarray = 2.0

    def __post_init__(self):
        if self.alpha < 0 or np.any(np.asarray(self.gamma) < 0):
            raise ValueError("focal alpha and gamma must be nonnegative")


# ----------------------------------------------------------------------------
# focal loss

def focal_terms(logits: np.ndarray, params: FocalParams):
    """Per-class positive and negative focal losses plus their logit derivatives.

    Returns ``pos, neg, dpos, dneg`` each shaped like ``logits``.
    """
    x = np.asarray(logits, dtype=np.float64)
    a, g = params.alpha, np.asarray(params.gamma, dtype=np.float64)
    p, q = expit(x), expit(-x)  # q = 1 - p, computed without cancellation
    log_p = -np.logaddexp(0.0, -x)
    log_q = -np.logaddexp(0.0, x)
    qg, pg = q ** g, p ** g
    pos = -a * qg * log_p
    neg = -(1 - a) * pg * log_q
    dpos = a * qg * (g * p * log_p - q)
    dneg = (1 - a) * pg * (p - g * q * log_q)
    return pos, neg, dpos, dneg


def focal_loss(logits, target: int | None, params: FocalParams = FocalParams()):
    """Sigmoid focal loss summed over classes.

    ``target`` is a class index or ``None`` for background. Returns
    ``(loss, grad)`` with ``grad`` the derivative w.r.t. ``logits``.
    """
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("focal_loss received non-finite logits")
    n = x.shape[-1]
    if target is not None and not (0 <= target < n):
        raise IndexError(f"class index {target} out of range for {n} classes")
    pos, neg, dpos, dneg = focal_terms(x, params)
    loss = neg.sum()
    grad = dneg.copy()
    if target is not None:
        loss += pos[target] - neg[target]
        grad[target] = dpos[target]
    return float(loss), grad


def focal_batch(logits: np.ndarray, targets: Sequence[int | None], params: FocalParams):
    """Row-wise focal loss for ``(N, C)`` logits; returns ``(losses (N,), grads (N, C))``."""
    x = np.asarray(logits, dtype=np.float64)
    pos, neg, dpos, dneg = focal_terms(x, params)
    losses = neg.sum(axis=-1)
    grads = dneg.copy()
    for i, t in enumerate(targets):
        if t is None:
            continue
        if not (0 <= t < x.shape[-1]):
            raise IndexError(f"class index {t} out of range for {x.shape[-1]} classes")
        losses[i] += pos[i, t] - neg[i, t]
        grads[i, t] = dpos[i, t]
    return losses, grads


def focal_cost_matrix(logits: np.ndarray, targets: Sequence[int | None], params: FocalParams,
                      mode: str = "full") -> np.ndarray:
    """``(N, C) logits x M targets -> (N, M)`` focal classification costs.

    ``mode="full"`` is the full summed focal value (identical to the loss);
    ``mode="target"`` keeps only the target-class entry, positive minus
    negative term, the variant common in set-prediction matchers.
    """
    x = np.asarray(logits, dtype=np.float64)
    pos, neg, _, _ = focal_terms(x, params)
    nsum = neg.sum(axis=-1)
    out = np.empty((x.shape[0], len(targets)))
    for j, t in enumerate(targets):
        if t is not None and not (0 <= t < x.shape[-1]):
            raise IndexError(f"class index {t} out of range for {x.shape[-1]} classes")
        if mode == "full":
            out[:, j] = nsum if t is None else nsum + pos[:, t] - neg[:, t]
        elif mode == "target":
            out[:, j] = 0.0 if t is None else pos[:, t] - neg[:, t]
        else:
            raise ValueError(f"unknown classification cost mode {mode!r}")
    return out


# ----------------------------------------------------------------------------
# box losses

def paired_box_losses(pred: np.ndarray, gt: np.ndarray):
    """L1 and GIoU losses between row-aligned ``(n, 4)`` cxcywh arrays.

    Returns ``l1 (n,), giou_loss (n,), dl1 (n, 4), dgiou (n, 4)``; gradients
    are w.r.t. ``pred``. At kinks (equal coordinates, touching edges) a
    one-sided derivative is used.
    """
    pred = check_boxes(np.atleast_2d(pred))
    gt = check_boxes(np.atleast_2d(gt))
    diff = pred - gt
    l1 = np.abs(diff).sum(axis=-1)
    dl1 = np.sign(diff)

    p, g = cxcywh_to_xyxy(pred), cxcywh_to_xyxy(gt)
    px1, py1, px2, py2 = p.T
    gx1, gy1, gx2, gy2 = g.T
    iw_raw = np.minimum(px2, gx2) - np.maximum(px1, gx1)
    ih_raw = np.minimum(py2, gy2) - np.maximum(py1, gy1)
    iw, ih = np.clip(iw_raw, 0, None), np.clip(ih_raw, 0, None)
    inter = iw * ih
    pw, ph = px2 - px1, py2 - py1
    area_p = pw * ph
    area_g = (gx2 - gx1) * (gy2 - gy1)
    union = area_p + area_g - inter
    ew = np.maximum(px2, gx2) - np.minimum(px1, gx1)
    eh = np.maximum(py2, gy2) - np.minimum(py1, gy1)
    enc = ew * eh
    giou = inter / union - (enc - union) / enc

    aw, ah = (iw_raw > 0).astype(float), (ih_raw > 0).astype(float)
    # columns: x1, y1, x2, y2 of the prediction
    d_inter = np.stack([-ih * (px1 > gx1) * aw, -iw * (py1 > gy1) * ah,
                        ih * (px2 < gx2) * aw, iw * (py2 < gy2) * ah], axis=-1)
    d_area = np.stack([-ph, -pw, ph, pw], axis=-1)
    d_union = d_area - d_inter
    d_enc = np.stack([-eh * (px1 <= gx1), -ew * (py1 <= gy1),
                      eh * (px2 >= gx2), ew * (py2 >= gy2)], axis=-1)
    u, e, i = union[:, None], enc[:, None], inter[:, None]
    d_giou = (d_inter * u - i * d_union) / u ** 2 + (d_union * e - u * d_enc) / e ** 2
    dc = -d_giou
    # corners -> (cx, cy, w, h)
    dgiou = np.stack([dc[:, 0] + dc[:, 2], dc[:, 1] + dc[:, 3],
                      (dc[:, 2] - dc[:, 0]) / 2, (dc[:, 3] - dc[:, 1]) / 2], axis=-1)
    return l1, 1.0 - giou, dl1, dgiou


def box_losses(pred, gt):
    """L1 and GIoU loss for a single box pair, with gradients w.r.t. ``pred``.

    Accepts :class:`~ssrcnn.geometry.Box` objects or length-4 cxcywh arrays.
    """
    pa = pred.as_array() if hasattr(pred, "as_array") else np.asarray(pred, dtype=np.float64)
    ga = gt.as_array() if hasattr(gt, "as_array") else np.asarray(gt, dtype=np.float64)
    l1, gl, dl1, dg = paired_box_losses(pa[None], ga[None])
    return float(l1[0]), float(gl[0]), dl1[0], dg[0]


# ----------------------------------------------------------------------------
# assembled triplet losses

@dataclass
class LossGrad:
    """Gradient buffers matching a :class:`PredictionSet` layout."""
    sub_boxes: np.ndarray
    obj_boxes: np.ndarray
    sub_logits: np.ndarray
    obj_logits: np.ndarray
    rel_logits: np.ndarray

    @classmethod
    def zeros_like(cls, preds: "PredictionSet") -> "LossGrad":
        return cls(*(np.zeros_like(a) for a in (preds.sub_boxes, preds.obj_boxes, preds.sub_logits,
                                                  preds.obj_logits, preds.rel_logits)))


@dataclass(frozen=True)
class Criterion:
    """Everything the assembled losses need besides predictions and targets.

    ``obj_focal`` may carry per-class focusing parameters; ``rel_focal`` is
    used for predicate logits. ``mode`` selects how unmatched slots are
    supervised: ``"pseudo"`` (two-stage), ``"full_bg"`` or ``"no_bg"``.
    """
    coeffs: LossCoefficients = field(default_factory=LossCoefficients)
    obj_focal: FocalParams = field(default_factory=FocalParams)
    rel_focal: FocalParams = field(default_factory=FocalParams)
    cls_cost: str = "full"
    mode: str = "pseudo"


def _box_term(boxes, targets, rows, w_l1, w_giou, gate=None):
    l1, gl, dl1, dg = paired_box_losses(boxes[rows], targets)
    gate = np.ones(len(rows)) if gate is None else np.asarray(gate, dtype=float)
    val = float((gate * (w_l1 * l1 + w_giou * gl)).sum())
    grad = gate[:, None] * (w_l1 * dl1 + w_giou * dg)
    return val, grad


def loss_LF(preds: "PredictionSet", result: "AssignmentResult", crit: Criterion = Criterion(),
            grad: LossGrad | None = None) -> float:
    """Loss over ground-truth-matched slots; accumulates into ``grad`` if given."""
    if not result.stage1:
        return 0.0
    c = crit.coeffs
    rows = np.array([i for i, _ in result.stage1])
    tg = [result.gt_triplets[j] for _, j in result.stage1]
    total = 0.0
    rel_l, rel_g = focal_batch(preds.rel_logits[rows], [t.predicate for t in tg], crit.rel_focal)
    total += c.cls_rel * rel_l.sum()
    sub_l, sub_g = focal_batch(preds.sub_logits[rows], [t.sub_label for t in tg], crit.obj_focal)
    obj_l, obj_g = focal_batch(preds.obj_logits[rows], [t.obj_label for t in tg], crit.obj_focal)
    total += c.cls_obj * (sub_l.sum() + obj_l.sum())
    sv, sg = _box_term(preds.sub_boxes, np.array([t.sub_box for t in tg]), rows, c.l1, c.giou)
    ov, og = _box_term(preds.obj_boxes, np.array([t.obj_box for t in tg]), rows, c.l1, c.giou)
    total += sv + ov
    if grad is not None:
        grad.rel_logits[rows] += c.cls_rel * rel_g
        grad.sub_logits[rows] += c.cls_obj * sub_g
        grad.obj_logits[rows] += c.cls_obj * obj_g
        grad.sub_boxes[rows] += sg
        grad.obj_boxes[rows] += og
    return float(total)


def loss_LB(preds: "PredictionSet", result: "AssignmentResult", crit: Criterion = Criterion(),
            grad: LossGrad | None = None) -> float:
    """Loss over pseudo-label-matched slots and the background residue.

    Pseudo-matched slots: relation vs background, object classes vs the
    pseudo labels (background when the pseudo object missed every GT), and
    box terms gated by the hit flag. Residue slots get the relation
    background term only, except in ``full_bg`` mode where their objects are
    also pushed to background.
    """
    c = crit.coeffs
    total = 0.0
    if result.stage2:
        rows = np.array([i for i, _ in result.stage2])
        pp = [result.pseudo_pairs[j] for _, j in result.stage2]
        rel_l, rel_g = focal_batch(preds.rel_logits[rows], [None] * len(rows), crit.rel_focal)
        total += c.cls_rel * rel_l.sum()
        sub_l, sub_g = focal_batch(preds.sub_logits[rows], [p.sub.label for p in pp], crit.obj_focal)
        obj_l, obj_g = focal_batch(preds.obj_logits[rows], [p.obj.label for p in pp], crit.obj_focal)
        total += c.pseudo_cls * (sub_l.sum() + obj_l.sum())
        sv, sg = _box_term(preds.sub_boxes, np.array([p.sub.box for p in pp]), rows,
                           c.pseudo_l1, c.pseudo_giou, [p.sub.hit for p in pp])
        ov, og = _box_term(preds.obj_boxes, np.array([p.obj.box for p in pp]), rows,
                           c.pseudo_l1, c.pseudo_giou, [p.obj.hit for p in pp])
        total += sv + ov
        if grad is not None:
            grad.rel_logits[rows] += c.cls_rel * rel_g
            grad.sub_logits[rows] += c.pseudo_cls * sub_g
            grad.obj_logits[rows] += c.pseudo_cls * obj_g
            grad.sub_boxes[rows] += sg
            grad.obj_boxes[rows] += og
    if result.background:
        rows = np.array(result.background)
        bg = [None] * len(rows)
        rel_l, rel_g = focal_batch(preds.rel_logits[rows], bg, crit.rel_focal)
        total += c.cls_rel * rel_l.sum()
        if grad is not None:
            grad.rel_logits[rows] += c.cls_rel * rel_g
        if crit.mode == "full_bg":
            sub_l, sub_g = focal_batch(preds.sub_logits[rows], bg, crit.obj_focal)
            obj_l, obj_g = focal_batch(preds.obj_logits[rows], bg, crit.obj_focal)
            total += c.cls_obj * (sub_l.sum() + obj_l.sum())
            if grad is not None:
                grad.sub_logits[rows] += c.cls_obj * sub_g
                grad.obj_logits[rows] += c.cls_obj * obj_g
    return float(total)


def total_loss(preds: "PredictionSet", result: "AssignmentResult", crit: Criterion = Criterion(),
               with_grad: bool = False):
    """``loss_LF + loss_LB``; returns ``(loss, LossGrad | None)``."""
    grad = LossGrad.zeros_like(preds) if with_grad else None
    value = loss_LF(preds, result, crit, grad) + loss_LB(preds, result, crit, grad)
    return value, grad

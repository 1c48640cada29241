"""Direct fit: gradient descent on free per-slot predictions.

Every step re-runs the two-stage assignment, evaluates the assembled loss
and its analytic gradient, and takes a plain gradient step (optionally with
backtracking). Boxes are parameterized as ``(cx, cy, log w, log h)`` so they
stay valid; box steps are scaled down because L1 and GIoU gradients on
normalized coordinates are an order of magnitude steeper than focal ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Sequence

import numpy as np

from .assignment import AuxDetection, assign_aux_labels, two_stage_assign
from .losses import Criterion, total_loss
from .metrics import recall_at_k
from .types import PredictionSet, SceneGraph

log = logging.getLogger(__name__)


class FitDivergedError(FloatingPointError):
    pass


@dataclass
class FitStep:
    step: int
    loss: float
    recall: float
    lr: float


@dataclass
class FitResult:
    preds: PredictionSet
    trajectory: list[FitStep] = field(default_factory=list)

    @property
    def final_recall(self) -> float:
        return self.trajectory[-1].recall if self.trajectory else math.nan

    def reached(self, recall: float = 1.0) -> int | None:
        """First step whose recall is at least ``recall``."""
        for s in self.trajectory:
            if s.recall >= recall:
                return s.step
        return None


def random_predictions(n: int, num_obj: int, num_rel: int, seed: int = 0,
                       logit_mean: float = -2.0) -> PredictionSet:
    rng = np.random.default_rng(seed)

    def boxes():
        wh = rng.uniform(0.1, 0.4, (n, 2))
        c = rng.uniform(0.25, 0.75, (n, 2))
        return np.concatenate([c, wh], axis=1)

    return PredictionSet(boxes(), boxes(),
                         logit_mean + 0.5 * rng.standard_normal((n, num_obj)),
                         logit_mean + 0.5 * rng.standard_normal((n, num_obj)),
                         logit_mean + 0.5 * rng.standard_normal((n, num_rel)))


def gt_predictions(scene: SceneGraph, n: int, num_obj: int, num_rel: int, seed: int = 0,
                   margin: float = 12.0) -> PredictionSet:
    """Slots ``0..G-1`` sit exactly on the GT triplets with saturated logits;
    the remaining slots are random with saturated background relations."""
    p = random_predictions(n, num_obj, num_rel, seed)
    p.rel_logits[:] = -margin
    for i, t in enumerate(scene.triplets()):
        p.sub_boxes[i], p.obj_boxes[i] = t.sub_box, t.obj_box
        for arr, lab in ((p.sub_logits, t.sub_label), (p.obj_logits, t.obj_label), (p.rel_logits, t.predicate)):
            arr[i] = -margin
            arr[i, lab] = margin
    return p


def _to_params(p: PredictionSet):
    def enc(b):
        return np.concatenate([b[:, :2], np.log(b[:, 2:])], axis=1)
    return [enc(p.sub_boxes), enc(p.obj_boxes), p.sub_logits.copy(), p.obj_logits.copy(), p.rel_logits.copy()]


def _from_params(theta) -> PredictionSet:
    def dec(t):
        return np.concatenate([t[:, :2], np.exp(t[:, 2:])], axis=1)
    return PredictionSet(dec(theta[0]), dec(theta[1]), theta[2], theta[3], theta[4])


def _param_grad(p: PredictionSet, g):
    def box(b, gb):
        out = gb.copy()
        out[:, 2:] *= b[:, 2:]
        return out
    return [box(p.sub_boxes, g.sub_boxes), box(p.obj_boxes, g.obj_boxes), g.sub_logits, g.obj_logits, g.rel_logits]


def current_recall(p: PredictionSet, scene: SceneGraph, k: int = 20) -> float:
    return recall_at_k([p.ranked()], [scene.triplets()], k)


def fit_direct(preds: PredictionSet, scene: SceneGraph, aux: Sequence[AuxDetection] = (),
               crit: Criterion = Criterion(), steps: int = 2000, lr: float = 0.5,
               box_lr_scale: float = 0.005, backtrack: bool = False, max_halvings: int = 30,
               k: int = 20, stop_at_recall: float | None = None) -> FitResult:
    """Descend ``loss_LF + loss_LB`` over the prediction slots.

    Box parameters use step ``lr * box_lr_scale``, logits use ``lr``. With
    ``backtrack`` a step is halved until the loss under the current
    assignment does not increase. Raises :class:`FitDivergedError` on a
    non-finite parameter or loss.
    """
    if len(preds) < len(scene.relations):
        raise ValueError(f"{len(preds)} slots cannot cover {len(scene.relations)} GT triplets")
    labelled = assign_aux_labels(aux, scene, crit) if aux else []
    theta = _to_params(preds)
    scales = [lr * box_lr_scale, lr * box_lr_scale, lr, lr, lr]
    result = FitResult(preds)
    for step in range(steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            cur = _from_params(theta)
        if not all(np.all(np.isfinite(a)) for a in (cur.sub_boxes, cur.obj_boxes, cur.sub_logits,
                                                     cur.obj_logits, cur.rel_logits)):
            raise FitDivergedError(f"non-finite parameters at step {step}")
        assign = two_stage_assign(cur, scene, labelled, crit, aux_assigned=True)
        loss, grad = total_loss(cur, assign, crit, with_grad=True)
        if not math.isfinite(loss):
            raise FitDivergedError(f"non-finite loss at step {step}")
        rec = current_recall(cur, scene, k)
        result.trajectory.append(FitStep(step, loss, rec, 0.0))
        if step == steps or (stop_at_recall is not None and rec >= stop_at_recall):
            break
        g = _param_grad(cur, grad)
        factor = 1.0
        for _ in range(max_halvings + 1):
            trial = [t - factor * s * gi for t, s, gi in zip(theta, scales, g)]
            if not backtrack:
                break
            try:
                new_loss, _ = total_loss(_from_params(trial), assign, crit)
            except ValueError:  # invalid box after an overlong step
                new_loss = math.inf
            if new_loss <= loss:
                break
            factor *= 0.5
        else:
            log.debug("step %d: backtracking exhausted, keeping parameters", step)
            trial = theta
            factor = 0.0
        result.trajectory[-1].lr = factor * lr
        theta = trial
    result.preds = _from_params(theta)
    return result

"""Scene graphs, ground-truth triplets and prediction containers.

Boxes are stored as float64 ``(cx, cy, w, h)`` arrays in normalized image
coordinates; see :mod:`ssrcnn.geometry` for the checked ``Box`` value type.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .geometry import check_boxes


@dataclass(frozen=True)
class GroundTruthTriplet:
    sub_box: np.ndarray
    sub_label: int
    obj_box: np.ndarray
    obj_label: int
    predicate: int
    sub_index: int = -1  # object indices in the owning scene, when known
    obj_index: int = -1

    @property
    def labels(self) -> tuple[int, int, int]:
        return (self.sub_label, self.predicate, self.obj_label)


@dataclass
class SceneGraph:
    """Objects plus annotated ``(subject, object, predicate)`` relations."""
    boxes: np.ndarray  # (n, 4) cxcywh, normalized
    labels: np.ndarray  # (n,)
    relations: np.ndarray  # (r, 3): subject index, object index, predicate
    width: float = 1.0
    height: float = 1.0
    image_id: int | str = 0

    def __post_init__(self):
        self.boxes = check_boxes(np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.relations = np.asarray(self.relations, dtype=np.int64).reshape(-1, 3)
        n = len(self.boxes)
        if len(self.labels) != n:
            raise ValueError(f"{n} boxes but {len(self.labels)} labels")
        if len(self.relations):
            if self.relations[:, :2].min() < 0 or self.relations[:, :2].max() >= n:
                raise ValueError("relation refers to a missing object")
            if np.any(self.relations[:, 0] == self.relations[:, 1]):
                raise ValueError("relation between an object and itself")

    @property
    def num_objects(self) -> int:
        return len(self.boxes)

    def triplets(self) -> list[GroundTruthTriplet]:
        return [GroundTruthTriplet(self.boxes[s], int(self.labels[s]), self.boxes[o],
                                   int(self.labels[o]), int(p), int(s), int(o))
                for s, o, p in self.relations]

    def annotated_pairs(self) -> set[tuple[int, int]]:
        return {(int(s), int(o)) for s, o, _ in self.relations}


@dataclass(frozen=True)
class TripletPrediction:
    sub_box: np.ndarray
    obj_box: np.ndarray
    sub_logits: np.ndarray
    obj_logits: np.ndarray
    rel_logits: np.ndarray


@dataclass(frozen=True)
class RankedTriplet:
    sub_box: np.ndarray
    sub_label: int
    sub_score: float
    obj_box: np.ndarray
    obj_label: int
    obj_score: float
    predicate: int
    predicate_score: float
    score: float

    @property
    def labels(self) -> tuple[int, int, int]:
        return (self.sub_label, self.predicate, self.obj_label)


def triplet_score(s_sub: float, s_obj: float, s_rel: float) -> float:
    """Combined ranking score: equal-weight product of the three scores."""
    return float(s_sub) * float(s_obj) * float(s_rel)


@dataclass
class PredictionSet:
    """``N`` triplet slots held as stacked arrays."""
    sub_boxes: np.ndarray  # (N, 4)
    obj_boxes: np.ndarray  # (N, 4)
    sub_logits: np.ndarray  # (N, C_obj)
    obj_logits: np.ndarray  # (N, C_obj)
    rel_logits: np.ndarray  # (N, C_rel)
    rel_adjust: np.ndarray | None = field(default=None)  # optional additive logit offset at ranking

    def __post_init__(self):
        n = len(self.sub_boxes)
        for name in ("obj_boxes", "sub_logits", "obj_logits", "rel_logits"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.sub_boxes)

    def __getitem__(self, i: int) -> TripletPrediction:
        return TripletPrediction(self.sub_boxes[i], self.obj_boxes[i], self.sub_logits[i],
                                 self.obj_logits[i], self.rel_logits[i])

    @classmethod
    def from_list(cls, items: list[TripletPrediction]) -> "PredictionSet":
        return cls(*(np.stack([getattr(t, k) for t in items]).astype(np.float64)
                     for k in ("sub_box", "obj_box", "sub_logits", "obj_logits", "rel_logits")))

    def take(self, idx) -> "PredictionSet":
        idx = np.asarray(idx)
        return PredictionSet(self.sub_boxes[idx], self.obj_boxes[idx], self.sub_logits[idx],
                             self.obj_logits[idx], self.rel_logits[idx], self.rel_adjust)

    def copy(self) -> "PredictionSet":
        return PredictionSet(self.sub_boxes.copy(), self.obj_boxes.copy(), self.sub_logits.copy(),
                             self.obj_logits.copy(), self.rel_logits.copy(), self.rel_adjust)

    def ranked(self) -> list[RankedTriplet]:
        """One triplet per slot: top class of each sigmoid head, product score.

        Sorted by combined score, descending; ties keep slot order.
        """
        out = []
        rel = self.rel_logits if self.rel_adjust is None else self.rel_logits + self.rel_adjust
        for i in range(len(self)):
            ls, lo, lr = (int(np.argmax(a[i])) for a in (self.sub_logits, self.obj_logits, rel))
            ss, so = float(expit(self.sub_logits[i, ls])), float(expit(self.obj_logits[i, lo]))
            sr = float(expit(rel[i, lr]))
            out.append(RankedTriplet(self.sub_boxes[i].copy(), ls, ss, self.obj_boxes[i].copy(), lo, so,
                                     lr, sr, triplet_score(ss, so, sr)))
        order = sorted(range(len(out)), key=lambda k: -out[k].score)
        return [out[k] for k in order]

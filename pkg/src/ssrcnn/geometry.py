"""Box representations, IoU/GIoU and union boxes.

Boxes live in normalized center format ``(cx, cy, w, h)``. All area
arithmetic goes through corner format ``(x1, y1, x2, y2)``. Array helpers
operate on ``(..., 4)`` float64 arrays and are what the cost and loss code
uses; the :class:`Box` value type is the checked public surface.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np


class InvalidGeometryError(ValueError):
    """Raised for boxes with non-positive width/height or non-finite values."""


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"non-finite box {vals}")
        if not (self.w > 0 and self.h > 0):
            raise InvalidGeometryError(f"box must have w > 0 and h > 0, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "Box":
        if not (x2 > x1 and y2 > y1):
            raise InvalidGeometryError(f"corner box needs x1 < x2 and y1 < y2, got {(x1, y1, x2, y2)}")
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    @classmethod
    def from_array(cls, a) -> "Box":
        cx, cy, w, h = (float(v) for v in a)
        return cls(cx, cy, w, h)

    def to_corners(self) -> "CornerBox":
        return CornerBox(self.cx - self.w / 2, self.cy - self.h / 2,
                         self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class CornerBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidGeometryError(f"non-finite box {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise InvalidGeometryError(f"corner box needs x1 < x2 and y1 < y2, got {vals}")

    def to_box(self) -> Box:
        return Box.from_corners(self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


# ----------------------------------------------------------------------------
# array helpers

def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    x1, y1, x2, y2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], axis=-1)


def check_boxes(b: np.ndarray) -> np.ndarray:
    """Validate a ``(..., 4)`` cxcywh array; returns it as float64."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape[-1] != 4:
        raise InvalidGeometryError(f"expected trailing dimension 4, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise InvalidGeometryError("non-finite box coordinates")
    if np.any(b[..., 2] <= 0) or np.any(b[..., 3] <= 0):
        raise InvalidGeometryError("box with non-positive width or height")
    return b


def _area_xyxy(c):
    return (c[..., 2] - c[..., 0]) * (c[..., 3] - c[..., 1])


def paired_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU between broadcast-compatible cxcywh arrays."""
    ca, cb = cxcywh_to_xyxy(check_boxes(a)), cxcywh_to_xyxy(check_boxes(b))
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    union = _area_xyxy(ca) + _area_xyxy(cb) - inter
    return inter / union


def paired_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise generalized IoU between broadcast-compatible cxcywh arrays."""
    ca, cb = cxcywh_to_xyxy(check_boxes(a)), cxcywh_to_xyxy(check_boxes(b))
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    union = _area_xyxy(ca) + _area_xyxy(cb) - inter
    ew = np.maximum(ca[..., 2], cb[..., 2]) - np.minimum(ca[..., 0], cb[..., 0])
    eh = np.maximum(ca[..., 3], cb[..., 3]) - np.minimum(ca[..., 1], cb[..., 1])
    enclosing = ew * eh
    return inter / union - (enclosing - union) / enclosing


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(N, 4) x (M, 4) -> (N, M)`` IoU matrix."""
    return paired_iou(np.asarray(a)[:, None, :], np.asarray(b)[None, :, :])


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(N, 4) x (M, 4) -> (N, M)`` GIoU matrix."""
    return paired_giou(np.asarray(a)[:, None, :], np.asarray(b)[None, :, :])


def paired_union_box(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ca, cb = cxcywh_to_xyxy(check_boxes(a)), cxcywh_to_xyxy(check_boxes(b))
    u = np.stack([np.minimum(ca[..., 0], cb[..., 0]), np.minimum(ca[..., 1], cb[..., 1]),
                  np.maximum(ca[..., 2], cb[..., 2]), np.maximum(ca[..., 3], cb[..., 3])], axis=-1)
    return xyxy_to_cxcywh(u)


# ----------------------------------------------------------------------------
# Box-level API

def iou(a: Box, b: Box) -> float:
    return float(paired_iou(a.as_array(), b.as_array()))


def giou(a: Box, b: Box) -> float:
    return float(paired_giou(a.as_array(), b.as_array()))


def union_box(a: Box, b: Box) -> Box:
    """Smallest axis-aligned box enclosing both ``a`` and ``b``."""
    ca, cb = a.to_corners(), b.to_corners()
    return Box.from_corners(min(ca.x1, cb.x1), min(ca.y1, cb.y1),
                            max(ca.x2, cb.x2), max(ca.y2, cb.y2))

"""Class-imbalance handling: per-class focusing parameters and post-hoc
logit adjustment, plus the frequency tables both are computed from."""
from __future__ import annotations

from dataclasses import dataclass
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .types import SceneGraph

log = logging.getLogger(__name__)


class FrequencyError(ValueError):
    pass


def adaptive_gamma(f_c: float, mu: float = 4.0, clamp: bool = True) -> float:
    """Focusing parameter for a class with in-triplet frequency ``f_c``.

    ``min(2, 3 - (1 - f)^mu * (-ln f)^(1/mu))``. For very rare classes the
    raw value can drop below zero; with ``clamp`` it is floored at 0.
    """
    if not (0 < f_c <= 1):
        raise FrequencyError(f"frequency must lie in (0, 1], got {f_c}")
    if mu <= 0:
        raise ValueError(f"mu must be positive, got {mu}")
    raw = 3.0 - (1.0 - f_c) ** mu * (-math.log(f_c)) ** (1.0 / mu)
    g = min(2.0, raw)
    if clamp and g < 0:
        log.warning("adaptive gamma %.4f for frequency %.3g clamped to 0", g, f_c)
        g = 0.0
    return g


def adaptive_gammas(freqs, mu: float = 4.0, clamp: bool = True) -> np.ndarray:
    return np.array([adaptive_gamma(float(f), mu, clamp) for f in np.asarray(freqs).reshape(-1)])


def logit_adjust(logits, freqs, tau: float = 0.3) -> np.ndarray:
    """``logit_c - tau * ln f_c`` (natural log), broadcasting over leading axes."""
    f = np.asarray(freqs.as_array() if isinstance(freqs, FrequencyTable) else freqs, dtype=np.float64)
    if np.any(f <= 0) or np.any(~np.isfinite(f)):
        raise FrequencyError("logit adjustment needs strictly positive frequencies")
    x = np.asarray(logits, dtype=np.float64)
    if x.shape[-1] != f.shape[-1]:
        raise ValueError(f"{x.shape[-1]} logits vs {f.shape[-1]} frequencies")
    return x - tau * np.log(f)


@dataclass
class FrequencyTable:
    """Per-category frequencies over one label space."""
    freqs: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.freqs = np.asarray(self.freqs, dtype=np.float64)
        if np.any(self.freqs <= 0) or np.any(self.freqs > 1):
            raise FrequencyError("frequencies must lie in (0, 1]")

    def __len__(self):
        return len(self.freqs)

    def as_array(self) -> np.ndarray:
        return self.freqs

    @classmethod
    def from_counts(cls, counts, smoothing: float = 0.0, names=None) -> "FrequencyTable":
        c = np.asarray(counts, dtype=np.float64) + smoothing
        if c.sum() <= 0:
            raise FrequencyError("no occurrences to compute frequencies from")
        if np.any(c <= 0):
            missing = np.flatnonzero(c <= 0).tolist()
            raise FrequencyError(f"categories {missing[:10]} never occur; pass smoothing > 0")
        return cls(c / c.sum(), names)

    def to_json(self) -> dict:
        keys = self.names if self.names is not None else [str(i) for i in range(len(self))]
        return {k: float(v) for k, v in zip(keys, self.freqs)}

    @classmethod
    def from_json(cls, mapping: Mapping[str, float], names: list[str] | None = None) -> "FrequencyTable":
        if names is None:
            names = list(mapping)
        try:
            vals = [float(mapping[n]) for n in names]
        except KeyError as e:
            raise FrequencyError(f"frequency sidecar lacks label {e.args[0]!r}") from None
        return cls(np.array(vals), list(names))

    def save(self, path) -> None:
        from .io import write_json
        write_json(path, self.to_json())

    @classmethod
    def load(cls, path, names=None) -> "FrequencyTable":
        return cls.from_json(json.loads(Path(path).read_text()), names)


def object_triplet_counts(scenes: Iterable[SceneGraph], num_classes: int) -> np.ndarray:
    """Occurrences of each object category as subject or object of a triplet."""
    counts = np.zeros(num_classes)
    for s in scenes:
        for sub, obj, _ in s.relations:
            counts[s.labels[sub]] += 1
            counts[s.labels[obj]] += 1
    return counts


def predicate_counts(scenes: Iterable[SceneGraph], num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes)
    for s in scenes:
        for _, _, p in s.relations:
            counts[p] += 1
    return counts

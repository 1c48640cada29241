"""Seeded synthetic scene graphs, feature maps and auxiliary detections.

Per-image seeds are ``master_seed + image_index``, so images can be
generated independently and in any order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .assignment import AuxDetection
from .heads import FeatureMap
from .types import RankedTriplet, SceneGraph


class SceneConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    min_objects: int = 2
    max_objects: int = 8
    num_object_classes: int = 150
    num_predicates: int = 50
    relation_density: float = 0.2  # fraction of ordered pairs annotated
    num_relations: int | None = None  # overrides density when set
    max_relations: int | None = None  # cap after density is applied
    min_size: float = 0.08
    max_size: float = 0.45
    label_skew: float = 1.0  # power-law exponent; 0 gives uniform labels
    seed: int = 0
    channels: int = 8
    map_size: int = 32
    map_components: int = 4

    def __post_init__(self):
        if self.min_objects < 1 or self.max_objects < self.min_objects:
            raise SceneConfigError("need 1 <= min_objects <= max_objects")
        if not (0 < self.relation_density <= 1):
            raise SceneConfigError("relation_density must lie in (0, 1]")
        if self.num_object_classes < 1 or self.num_predicates < 1:
            raise SceneConfigError("vocabularies must be nonempty")
        if not (0 < self.min_size <= self.max_size):
            raise SceneConfigError("need 0 < min_size <= max_size")
        if self.label_skew < 0:
            raise SceneConfigError("label_skew must be nonnegative")


@dataclass(frozen=True)
class PerturbModel:
    jitter: float = 0.05
    flip_prob: float = 0.1
    drop_prob: float = 0.1
    spurious_rate: float = 0.2  # expected spurious detections per GT object
    score_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_prob", "drop_prob"):
            v = getattr(self, name)
            if not (0 <= v <= 1):
                raise SceneConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.jitter < 0 or self.spurious_rate < 0 or self.score_noise < 0:
            raise SceneConfigError("jitter, spurious_rate and score_noise must be nonnegative")


def label_distribution(n: int, skew: float) -> np.ndarray:
    p = (np.arange(1, n + 1, dtype=np.float64)) ** (-skew)
    return p / p.sum()


def sample_labels(rng: np.random.Generator, n: int, skew: float, size) -> np.ndarray:
    return rng.choice(n, size=size, p=label_distribution(n, skew))


def random_boxes(rng: np.random.Generator, n: int, min_size: float, max_size: float) -> np.ndarray:
    w = rng.uniform(min_size, max_size, n)
    h = rng.uniform(min_size, max_size, n)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return np.stack([cx, cy, w, h], axis=1)


def smooth_feature_map(rng: np.random.Generator, channels: int, size: int, components: int) -> FeatureMap:
    """Sum of a few low-frequency plane waves per channel."""
    yy, xx = np.meshgrid((np.arange(size) + 0.5) / size, (np.arange(size) + 0.5) / size, indexing="ij")
    out = np.zeros((channels, size, size))
    for c in range(channels):
        for _ in range(components):
            fx, fy = rng.uniform(-3, 3, 2)
            phase = rng.uniform(0, 2 * np.pi)
            out[c] += rng.standard_normal() * np.cos(2 * np.pi * (fx * xx + fy * yy) + phase)
    return FeatureMap(out)


def generate_scene(cfg: SceneConfig, index: int = 0) -> tuple[SceneGraph, FeatureMap]:
    """Deterministic scene for ``(cfg.seed, index)``."""
    rng = np.random.default_rng(cfg.seed + index)
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    boxes = random_boxes(rng, n, cfg.min_size, cfg.max_size)
    labels = sample_labels(rng, cfg.num_object_classes, cfg.label_skew, n)
    pairs = [(s, o) for s in range(n) for o in range(n) if s != o]
    if cfg.num_relations is not None:
        n_rel = cfg.num_relations
        if n_rel > len(pairs):
            raise SceneConfigError(f"{n_rel} relations requested but only {len(pairs)} ordered pairs exist")
    else:
        n_rel = int(round(cfg.relation_density * len(pairs)))
        if pairs:
            n_rel = max(n_rel, 1)
    if cfg.max_relations is not None:
        n_rel = min(n_rel, cfg.max_relations)
    chosen = rng.permutation(len(pairs))[:n_rel]
    preds = sample_labels(rng, cfg.num_predicates, cfg.label_skew, n_rel)
    rels = np.array([[pairs[k][0], pairs[k][1], p] for k, p in zip(chosen, preds)], dtype=np.int64).reshape(-1, 3)
    scene = SceneGraph(boxes, labels, rels, width=1.0, height=1.0, image_id=index)
    fmap = smooth_feature_map(rng, cfg.channels, cfg.map_size, cfg.map_components)
    return scene, fmap


def generate_dataset(cfg: SceneConfig, images: int) -> list[SceneGraph]:
    return [generate_scene(cfg, i)[0] for i in range(images)]


def perturb_detections(scene: SceneGraph, m: PerturbModel, num_classes: int | None = None,
                       index: int = 0) -> list[AuxDetection]:
    """Noisy detections of the scene's objects plus spurious ones.

    Each GT object survives with probability ``1 - drop_prob``; its box is
    jittered relative to its size and its label flipped with ``flip_prob``.
    Logits are +4 for the reported label and -4 elsewhere, plus Gaussian
    ``score_noise``. ``matched_gt`` is left unset.
    """
    rng = np.random.default_rng(m.seed + index)
    nc = num_classes if num_classes is not None else int(scene.labels.max(initial=0)) + 1

    def logits_for(label):
        z = np.full(nc, -4.0)
        z[label] = 4.0
        if m.score_noise:
            z += m.score_noise * rng.standard_normal(nc)
        return z

    out = []
    for b, lab in zip(scene.boxes, scene.labels):
        if rng.random() < m.drop_prob:
            continue
        e = rng.standard_normal(4)
        box = np.array([b[0] + m.jitter * b[2] * e[0], b[1] + m.jitter * b[3] * e[1],
                        b[2] * np.exp(m.jitter * e[2]), b[3] * np.exp(m.jitter * e[3])])
        if rng.random() < m.flip_prob:
            lab = int(rng.integers(nc))
        out.append(AuxDetection(box, logits_for(int(lab))))
    n_spur = int(rng.poisson(m.spurious_rate * scene.num_objects)) if m.spurious_rate > 0 else 0
    for box in random_boxes(rng, n_spur, 0.05, 0.4):
        out.append(AuxDetection(box, logits_for(int(rng.integers(nc)))))
    return out


def synthetic_predictions(scene: SceneGraph, m: PerturbModel, num_object_classes: int, num_predicates: int,
                          index: int = 0, prior_bias: float = 1.0, signal: float = 3.0):
    """Ranked triplets imitating a biased relation classifier.

    One candidate per GT triplet (boxes jittered, object labels flipped with
    ``flip_prob``, dropped with ``drop_prob``) plus Poisson-many spurious
    pairs. Predicate logits are ``prior_bias * ln(prior) + noise`` with
    ``signal`` added on the true predicate, so frequent predicates are
    favoured the way a long-tail-trained head favours them. Returns
    ``(triplets sorted by score, predicate logits in the same order)``.
    With ``m`` all zero the GT comes back exactly, scored by rank.
    """
    rng = np.random.default_rng(m.seed + 7919 * (index + 1))
    log_prior = np.log(label_distribution(num_predicates, 1.0))

    def jitter(b):
        if m.jitter == 0:
            return b.copy()
        e = rng.standard_normal(4)
        return np.array([b[0] + m.jitter * b[2] * e[0], b[1] + m.jitter * b[3] * e[1],
                         b[2] * np.exp(m.jitter * e[2]), b[3] * np.exp(m.jitter * e[3])])

    def label(lab):
        return int(rng.integers(num_object_classes)) if rng.random() < m.flip_prob else int(lab)

    def pred_logits(true):
        z = prior_bias * log_prior + m.score_noise * rng.standard_normal(num_predicates)
        if true is not None:
            z[true] += signal
        return z

    cands = []
    for t in scene.triplets():
        if rng.random() < m.drop_prob:
            continue
        cands.append((jitter(t.sub_box), label(t.sub_label), jitter(t.obj_box), label(t.obj_label),
                      pred_logits(t.predicate), t.predicate))
    n_spur = int(rng.poisson(m.spurious_rate * scene.num_objects)) if m.spurious_rate > 0 else 0
    if scene.num_objects >= 2:
        for _ in range(n_spur):
            s, o = rng.choice(scene.num_objects, 2, replace=False)
            cands.append((jitter(scene.boxes[s]), label(scene.labels[s]), jitter(scene.boxes[o]),
                          label(scene.labels[o]), pred_logits(None), None))

    out, logits = [], []
    exact = m.score_noise == 0 and m.jitter == 0
    for rank, (sb, sl, ob, ol, z, true) in enumerate(cands):
        p = int(true) if exact and true is not None else int(np.argmax(z))
        if exact:
            ss = os_ = 1.0
            ps = 1.0 - rank / (len(cands) + 1)
        else:
            ss, os_ = (float(expit(4.0 + m.score_noise * rng.standard_normal())) for _ in range(2))
            ps = float(expit(z[p]))
        out.append(RankedTriplet(sb, sl, ss, ob, ol, os_, p, ps, ss * os_ * ps))
        logits.append(z)
    order = sorted(range(len(out)), key=lambda k: -out[k].score)
    return [out[k] for k in order], [logits[k] for k in order]

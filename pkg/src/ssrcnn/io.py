"""JSON file formats: datasets, predictions, seen sets and run headers.

Dataset file::

    {"images": [{"id", "width", "height",
                 "objects": [{"id", "label", "bbox": [x1, y1, x2, y2]}],
                 "relations": [{"sub_id", "obj_id", "predicate"}]}],
     "vocab": {"objects": [...], "predicates": [...]}}

Boxes are absolute pixels in files and normalized ``cxcywh`` in memory.
Labels may be vocabulary names or integer indices. A predictions file has
the same image fields but replaces ``objects``/``relations`` with ranked
``triplets``: ``{"sub": {"bbox", "label", "score"}, "obj": {...},
"predicate", "predicate_score", "score"}`` plus optional
``"predicate_logits"`` (one per predicate, needed for calibration).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import os
from pathlib import Path
import tempfile
from typing import Any

import numpy as np

from . import __version__
from .geometry import cxcywh_to_xyxy, xyxy_to_cxcywh
from .types import RankedTriplet, SceneGraph, triplet_score


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class Vocab:
    objects: list[str]
    predicates: list[str]

    @classmethod
    def default(cls, n_obj: int, n_pred: int) -> "Vocab":
        return cls([f"obj{i}" for i in range(n_obj)], [f"pred{i}" for i in range(n_pred)])

    def to_json(self):
        return {"objects": list(self.objects), "predicates": list(self.predicates)}


@dataclass
class Dataset:
    scenes: list[SceneGraph]
    vocab: Vocab
    header: dict = field(default_factory=dict)


@dataclass
class PredictionImage:
    image_id: Any
    width: float
    height: float
    triplets: list[RankedTriplet]
    predicate_logits: list[np.ndarray | None] = field(default_factory=list)


def header(config: dict | None = None) -> dict:
    return {"ssrcnn_version": __version__, "config": config or {}}


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=1, sort_keys=False) + "\n")


# ----------------------------------------------------------------------------
# parsing helpers

def _get(d, key, path):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing field")
    return d[key]


def _number(v, path) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise SchemaError(path, f"expected a finite number, got {v!r}")
    return float(v)


def _label(v, names: list[str], path: str) -> int:
    if isinstance(v, bool):
        raise SchemaError(path, f"invalid label {v!r}")
    if isinstance(v, int):
        if not (0 <= v < len(names)):
            raise SchemaError(path, f"label index {v} outside vocabulary of size {len(names)}")
        return v
    if isinstance(v, str):
        try:
            return names.index(v)
        except ValueError:
            raise SchemaError(path, f"label {v!r} not in vocabulary") from None
    raise SchemaError(path, f"invalid label {v!r}")


def _bbox(v, width, height, path) -> np.ndarray:
    if not isinstance(v, list) or len(v) != 4:
        raise SchemaError(path, "bbox must be [x1, y1, x2, y2]")
    x1, y1, x2, y2 = (_number(c, f"{path}[{i}]") for i, c in enumerate(v))
    if x2 <= x1 or y2 <= y1:
        raise SchemaError(path, f"degenerate box, need x1 < x2 and y1 < y2, got {v}")
    x1, x2 = np.clip([x1, x2], 0, width)
    y1, y2 = np.clip([y1, y2], 0, height)
    if x2 <= x1 or y2 <= y1:
        raise SchemaError(path, "box lies outside the image")
    return xyxy_to_cxcywh(np.array([x1 / width, y1 / height, x2 / width, y2 / height]))


def _to_pixels(box, width, height) -> list[float]:
    x1, y1, x2, y2 = cxcywh_to_xyxy(box)
    return [float(x1 * width), float(y1 * height), float(x2 * width), float(y2 * height)]


def _vocab(raw, path="vocab") -> Vocab:
    objs = _get(raw, "objects", path)
    preds = _get(raw, "predicates", path)
    for name, lst in (("objects", objs), ("predicates", preds)):
        if not isinstance(lst, list) or not all(isinstance(s, str) for s in lst):
            raise SchemaError(f"{path}.{name}", "expected a list of strings")
    return Vocab(list(objs), list(preds))


def _image_dims(img, path):
    w = _number(_get(img, "width", path), f"{path}.width")
    h = _number(_get(img, "height", path), f"{path}.height")
    if w <= 0 or h <= 0:
        raise SchemaError(path, "image width and height must be positive")
    return w, h


# ----------------------------------------------------------------------------
# datasets

def parse_dataset(raw: dict) -> Dataset:
    vocab = _vocab(_get(raw, "vocab", "$"))
    images = _get(raw, "images", "$")
    if not isinstance(images, list):
        raise SchemaError("images", "expected a list")
    scenes = []
    for i, img in enumerate(images):
        path = f"images[{i}]"
        w, h = _image_dims(img, path)
        ids: dict[Any, int] = {}
        boxes, labels = [], []
        objects = _get(img, "objects", path)
        if not isinstance(objects, list):
            raise SchemaError(f"{path}.objects", "expected a list")
        for j, obj in enumerate(objects):
            opath = f"{path}.objects[{j}]"
            oid = _get(obj, "id", opath)
            if oid in ids:
                raise SchemaError(f"{opath}.id", f"duplicate object id {oid!r}")
            ids[oid] = j
            labels.append(_label(_get(obj, "label", opath), vocab.objects, f"{opath}.label"))
            boxes.append(_bbox(_get(obj, "bbox", opath), w, h, f"{opath}.bbox"))
        rels = []
        relations = img.get("relations", [])
        if not isinstance(relations, list):
            raise SchemaError(f"{path}.relations", "expected a list")
        for j, rel in enumerate(relations):
            rpath = f"{path}.relations[{j}]"
            s, o = _get(rel, "sub_id", rpath), _get(rel, "obj_id", rpath)
            for key, v in (("sub_id", s), ("obj_id", o)):
                if v not in ids:
                    raise SchemaError(f"{rpath}.{key}", f"unknown object id {v!r}")
            if s == o:
                raise SchemaError(rpath, "relation between an object and itself")
            rels.append([ids[s], ids[o], _label(_get(rel, "predicate", rpath), vocab.predicates, f"{rpath}.predicate")])
        scenes.append(SceneGraph(np.array(boxes).reshape(-1, 4), np.array(labels, dtype=np.int64),
                                 np.array(rels, dtype=np.int64).reshape(-1, 3), w, h, img.get("id", i)))
    hdr = {k: raw[k] for k in ("ssrcnn_version", "config") if k in raw}
    return Dataset(scenes, vocab, hdr)


def load_scene_file(path) -> Dataset:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"line {e.lineno} column {e.colno}", f"malformed JSON: {e.msg}") from None
    return parse_dataset(raw)


def dataset_to_json(ds: Dataset, config: dict | None = None) -> dict:
    images = []
    for s in ds.scenes:
        images.append({
            "id": s.image_id, "width": s.width, "height": s.height,
            "objects": [{"id": j, "label": ds.vocab.objects[int(l)], "bbox": _to_pixels(b, s.width, s.height)}
                        for j, (b, l) in enumerate(zip(s.boxes, s.labels))],
            "relations": [{"sub_id": int(a), "obj_id": int(b), "predicate": ds.vocab.predicates[int(p)]}
                          for a, b, p in s.relations],
        })
    return {**header(config), "vocab": ds.vocab.to_json(), "images": images}


def save_scene_file(path, ds: Dataset, config: dict | None = None) -> None:
    write_json(path, dataset_to_json(ds, config))


# ----------------------------------------------------------------------------
# predictions

def _pred_entity(raw, vocab, w, h, path):
    box = _bbox(_get(raw, "bbox", path), w, h, f"{path}.bbox")
    label = _label(_get(raw, "label", path), vocab.objects, f"{path}.label")
    score = _number(raw.get("score", 1.0), f"{path}.score")
    return box, label, score


def parse_predictions(raw: dict, vocab: Vocab | None = None) -> tuple[list[PredictionImage], Vocab]:
    vocab = _vocab(raw["vocab"]) if "vocab" in raw else vocab
    if vocab is None:
        raise SchemaError("$.vocab", "missing field")
    images = _get(raw, "images", "$")
    out = []
    for i, img in enumerate(images):
        path = f"images[{i}]"
        w, h = _image_dims(img, path)
        trips, logits = [], []
        for j, t in enumerate(_get(img, "triplets", path)):
            tpath = f"{path}.triplets[{j}]"
            sb, sl, ss = _pred_entity(_get(t, "sub", tpath), vocab, w, h, f"{tpath}.sub")
            ob, ol, os_ = _pred_entity(_get(t, "obj", tpath), vocab, w, h, f"{tpath}.obj")
            p = _label(_get(t, "predicate", tpath), vocab.predicates, f"{tpath}.predicate")
            ps = _number(t.get("predicate_score", 1.0), f"{tpath}.predicate_score")
            score = _number(t["score"], f"{tpath}.score") if "score" in t else triplet_score(ss, os_, ps)
            trips.append(RankedTriplet(sb, sl, ss, ob, ol, os_, p, ps, score))
            lg = t.get("predicate_logits")
            if lg is not None:
                if not isinstance(lg, list) or len(lg) != len(vocab.predicates):
                    raise SchemaError(f"{tpath}.predicate_logits", f"expected {len(vocab.predicates)} numbers")
                lg = np.array([_number(v, f"{tpath}.predicate_logits[{k}]") for k, v in enumerate(lg)])
            logits.append(lg)
        order = sorted(range(len(trips)), key=lambda k: -trips[k].score)
        out.append(PredictionImage(img.get("id", i), w, h, [trips[k] for k in order], [logits[k] for k in order]))
    return out, vocab


def load_predictions(path, vocab: Vocab | None = None):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise SchemaError(f"line {e.lineno} column {e.colno}", f"malformed JSON: {e.msg}") from None
    return parse_predictions(raw, vocab)


def predictions_to_json(images: list[PredictionImage], vocab: Vocab, config: dict | None = None) -> dict:
    out = []
    for im in images:
        trips = []
        for k, t in enumerate(im.triplets):
            entry = {
                "sub": {"bbox": _to_pixels(t.sub_box, im.width, im.height), "label": vocab.objects[t.sub_label],
                        "score": t.sub_score},
                "obj": {"bbox": _to_pixels(t.obj_box, im.width, im.height), "label": vocab.objects[t.obj_label],
                        "score": t.obj_score},
                "predicate": vocab.predicates[t.predicate], "predicate_score": t.predicate_score,
                "score": t.score,
            }
            if k < len(im.predicate_logits) and im.predicate_logits[k] is not None:
                entry["predicate_logits"] = [float(v) for v in im.predicate_logits[k]]
            trips.append(entry)
        out.append({"id": im.image_id, "width": im.width, "height": im.height, "triplets": trips})
    return {**header(config), "vocab": vocab.to_json(), "images": out}


def load_seen_set(path, vocab: Vocab) -> set[tuple[int, int, int]]:
    """``{"seen": [[subject, predicate, object], ...]}`` with names or indices."""
    raw = json.loads(Path(path).read_text())
    items = _get(raw, "seen", "$")
    seen = set()
    for i, t in enumerate(items):
        if not isinstance(t, list) or len(t) != 3:
            raise SchemaError(f"seen[{i}]", "expected [subject, predicate, object]")
        seen.add((_label(t[0], vocab.objects, f"seen[{i}][0]"), _label(t[1], vocab.predicates, f"seen[{i}][1]"),
                  _label(t[2], vocab.objects, f"seen[{i}][2]")))
    return seen


def seen_from_scenes(scenes) -> set[tuple[int, int, int]]:
    return {t.labels for s in scenes for t in s.triplets()}

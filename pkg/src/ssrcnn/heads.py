"""Forward pass of the triplet detection head and its cascade.

One head refines N triplet queries: pair fusion of subject/object vectors,
self-attention over all 2N object vectors, dynamic convolution on RoI
features, cls/reg FFNs for objects, relation dynamic convolution over the
subject, object and union regions, entity-to-relation fusion, relation FFN
and the two-branch relation classifier.

Shapes follow column-vector convention, ``W @ x``; batches are row-stacked.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
import json
import os
from pathlib import Path

import numpy as np

from .geometry import check_boxes, cxcywh_to_xyxy, paired_union_box
from .io import atomic_write_text
from .numerics import (AttentionWeights, DimensionError, check_finite, layer_norm, linear,
                       mh_attention, relu)

POOL = 7


# ----------------------------------------------------------------------------
# feature maps

@dataclass
class FeatureMap:
    values: np.ndarray  # (C, H, W)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"feature map must be (C, H, W), got {self.values.shape}")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def roi_pool(self, box, size: int = POOL) -> np.ndarray:
        """Bilinear samples at the centers of a ``size x size`` grid over ``box``.

        Coordinates are normalized; samples outside the map clamp to the
        border. Returns ``(C, size, size)``.
        """
        c, h, w = self.values.shape
        x1, y1, x2, y2 = cxcywh_to_xyxy(check_boxes(box))
        t = (np.arange(size) + 0.5) / size
        xs = (x1 + t * (x2 - x1)) * w - 0.5
        ys = (y1 + t * (y2 - y1)) * h - 0.5
        xs = np.clip(xs, 0, w - 1)
        ys = np.clip(ys, 0, h - 1)
        x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros(size, int)
        y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros(size, int)
        fx = xs - x0 if w > 1 else np.zeros(size)
        fy = ys - y0 if h > 1 else np.zeros(size)
        x1i = np.minimum(x0 + 1, w - 1)
        y1i = np.minimum(y0 + 1, h - 1)
        v = self.values
        top = v[:, y0][:, :, x0] * (1 - fx) + v[:, y0][:, :, x1i] * fx
        bot = v[:, y1i][:, :, x0] * (1 - fx) + v[:, y1i][:, :, x1i] * fx
        return top * (1 - fy)[None, :, None] + bot * fy[None, :, None]


# ----------------------------------------------------------------------------
# weights

@dataclass(frozen=True)
class HeadDims:
    d_obj: int = 1024
    d_rel: int = 256
    channels: int = 256
    filters: int = 64
    num_obj_classes: int = 150
    num_rel_classes: int = 50
    heads: int = 8
    ffn: int = 2048

    def __post_init__(self):
        if self.d_obj % self.heads:
            raise DimensionError(f"d_obj={self.d_obj} not divisible by {self.heads} attention heads")
        if self.d_obj % 8:
            raise DimensionError("d_obj must be a multiple of 8 for the box positional encoding")


@dataclass
class DynConvWeights:
    w1: np.ndarray  # (d, K1, C): filter generator of the first 1x1 conv
    w2: np.ndarray  # (d, C, K1)
    wv: np.ndarray  # (d, C * 7 * 7)


@dataclass
class HeadWeights:
    """All learnable matrices of one head. Keys of the flat bundle are the
    field names, with ``attn.*``, ``dc_obj.*``, ``dc_rel.*`` and ``ln.<site>.{gain,bias}``
    prefixes for the nested parts."""
    # pair fusion
    pf_s0: np.ndarray  # (d_obj, d_obj)
    pf_o0: np.ndarray
    pf_s1: np.ndarray
    pf_o1: np.ndarray
    attn: AttentionWeights
    dc_obj: DynConvWeights
    dc_rel: DynConvWeights
    # object FFN, classifier and box regressor
    obj_ffn1: np.ndarray  # (ffn, d_obj)
    obj_ffn2: np.ndarray  # (d_obj, ffn)
    obj_cls: np.ndarray  # (n_obj, d_obj)
    obj_reg: np.ndarray  # (4, d_obj)
    # entity-to-relation fusion
    e2r_s: np.ndarray  # (d_rel, d_obj)
    e2r_o: np.ndarray
    e2r_x: np.ndarray  # (d_rel, d_rel)
    e2r_y: np.ndarray
    e2r_ps: np.ndarray  # (d_rel, d_obj)
    e2r_po: np.ndarray
    e2r_pr: np.ndarray  # (d_rel, d_rel)
    # relation FFN and classifier branches
    rel_ffn1: np.ndarray  # (ffn, d_rel)
    rel_ffn2: np.ndarray  # (d_rel, ffn)
    rel_cls: np.ndarray  # (n_rel, d_rel)
    rc_s: np.ndarray  # (d_obj, d_obj)
    rc_o: np.ndarray
    rc_cls: np.ndarray  # (n_rel, d_obj)
    ln: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def norm(self, site: str, x):
        gain, bias = self.ln.get(site, (None, None))
        return layer_norm(x, gain, bias)

    # --- serialization -------------------------------------------------
    def to_flat(self) -> dict[str, np.ndarray]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "ln":
                for site, (g, b) in sorted(v.items()):
                    out[f"ln.{site}.gain"] = g
                    out[f"ln.{site}.bias"] = b
            elif isinstance(v, (AttentionWeights, DynConvWeights)):
                for sub in fields(v):
                    out[f"{f.name}.{sub.name}"] = getattr(v, sub.name)
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_flat(cls, flat: dict[str, np.ndarray]) -> "HeadWeights":
        kw = {}
        ln: dict[str, list] = {}
        for key, val in flat.items():
            val = np.asarray(val, dtype=np.float64)
            if key.startswith("ln."):
                _, site, part = key.split(".")
                ln.setdefault(site, [None, None])[0 if part == "gain" else 1] = val
            elif "." in key:
                outer, inner = key.split(".")
                kw.setdefault(outer, {})[inner] = val
            else:
                kw[key] = val
        kw["attn"] = AttentionWeights(**kw["attn"])
        kw["dc_obj"] = DynConvWeights(**kw["dc_obj"])
        kw["dc_rel"] = DynConvWeights(**kw["dc_rel"])
        kw["ln"] = {s: (g, b) for s, (g, b) in ln.items()}
        return cls(**kw)

    def scaled(self, factor: float, keys=None) -> "HeadWeights":
        flat = self.to_flat()
        for k in (keys if keys is not None else flat):
            flat[k] = flat[k] * factor
        return HeadWeights.from_flat(flat)


LN_SITES_OBJ = ("pf", "attn", "dc1", "dc2", "dcv", "dcout", "ffn", "rc_s", "rc_o")
LN_SITES_REL = ("rdc1", "rdc2", "rdcv", "rdcout", "e2r_s", "e2r_o", "e2r", "rffn")


def _ln_dim(site: str, dims: HeadDims) -> int:
    return {"dc1": dims.filters, "dc2": dims.channels, "rdc1": dims.filters, "rdc2": dims.channels,
            "e2r_s": dims.d_rel, "e2r_o": dims.d_rel}.get(site, dims.d_obj if site in LN_SITES_OBJ else dims.d_rel)


def init_head_weights(dims: HeadDims, seed: int = 0, scale: float = 1.0, ln_affine: bool = False) -> HeadWeights:
    """Seeded Gaussian init with fan-in scaling (times ``scale``)."""
    rng = np.random.default_rng(seed)

    def mat(rows, cols, fan_in=None):
        return rng.standard_normal((rows, cols)) * scale / np.sqrt(fan_in or cols)

    d, r, c, k = dims.d_obj, dims.d_rel, dims.channels, dims.filters
    flat_in = c * POOL * POOL

    def dyn(dim):
        return DynConvWeights(rng.standard_normal((dim, k, c)) * scale / np.sqrt(dim * c),
                              rng.standard_normal((dim, c, k)) * scale / np.sqrt(dim * k),
                              mat(dim, flat_in))

    ln = {}
    for site in LN_SITES_OBJ + LN_SITES_REL:
        n = _ln_dim(site, dims)
        if ln_affine:
            ln[site] = (1 + 0.1 * rng.standard_normal(n), 0.1 * rng.standard_normal(n))
        else:
            ln[site] = (np.ones(n), np.zeros(n))
    return HeadWeights(
        pf_s0=mat(d, d), pf_o0=mat(d, d), pf_s1=mat(d, d), pf_o1=mat(d, d),
        attn=AttentionWeights(mat(d, d), mat(d, d), mat(d, d), mat(d, d)),
        dc_obj=dyn(d), dc_rel=dyn(r),
        obj_ffn1=mat(dims.ffn, d), obj_ffn2=mat(d, dims.ffn),
        obj_cls=mat(dims.num_obj_classes, d), obj_reg=mat(4, d) * 0.1,
        e2r_s=mat(r, d), e2r_o=mat(r, d), e2r_x=mat(r, r), e2r_y=mat(r, r),
        e2r_ps=mat(r, d), e2r_po=mat(r, d), e2r_pr=mat(r, r),
        rel_ffn1=mat(dims.ffn, r), rel_ffn2=mat(r, dims.ffn), rel_cls=mat(dims.num_rel_classes, r),
        rc_s=mat(d, d), rc_o=mat(d, d), rc_cls=mat(dims.num_rel_classes, d),
        ln=ln,
    )


def save_weights(heads: list[HeadWeights], path) -> None:
    """``.npz`` (binary) or ``.json`` bundle; keys are ``head<i>/<name>``."""
    path = Path(path)
    flat = {f"head{i}/{k}": v for i, h in enumerate(heads) for k, v in h.to_flat().items()}
    if path.suffix == ".npz":
        tmp = path.with_name(f".{path.name}.tmp.npz")
        np.savez(tmp, **flat)
        os.replace(tmp, path)
    else:
        atomic_write_text(path, json.dumps({k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()}
                                            for k, v in flat.items()}))


def load_weights(path) -> list[HeadWeights]:
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as z:
            flat = {k: z[k] for k in z.files}
    else:
        raw = json.loads(path.read_text())
        flat = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in raw.items()}
    per_head: dict[int, dict] = {}
    for key, val in flat.items():
        head, name = key.split("/", 1)
        per_head.setdefault(int(head[4:]), {})[name] = val
    return [HeadWeights.from_flat(per_head[i]) for i in sorted(per_head)]


# ----------------------------------------------------------------------------
# building blocks

def box_positional_encoding(boxes, dim: int) -> np.ndarray:
    """Sinusoidal encoding of (cx, cy, w, h); ``dim / 4`` features per coordinate."""
    b = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    if dim % 8:
        raise DimensionError("positional encoding dimension must be a multiple of 8")
    per = dim // 4
    freqs = 10000.0 ** (-np.arange(per // 2) * 2.0 / per)
    ang = b[:, :, None] * 2 * np.pi * freqs[None, None, :]  # (n, 4, per/2)
    enc = np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).reshape(len(b), dim)
    return enc if np.ndim(boxes) > 1 else enc[0]


def pair_fusion(x_s, x_o, p_s, p_o, w: HeadWeights):
    """Exchange information inside each subject/object pair.

    Returns ``(x_s', x_o')``; works on single vectors or row-stacked batches.
    """
    for name, v in (("x_s", x_s), ("x_o", x_o), ("p_s", p_s), ("p_o", p_o)):
        check_finite(v, name)
    x_p = relu(w.norm("pf", linear(w.pf_s0, x_s) + linear(w.pf_o0, x_o)))
    return x_s + linear(w.pf_s1, x_p) + p_s, x_o + linear(w.pf_o1, x_p) + p_o


def dynamic_conv(x, v0, dw: DynConvWeights, w: HeadWeights, prefix: str = ""):
    """Two 1x1 convolutions with filters generated from ``x``, then a residual update.

    ``x`` is ``(d,)``; ``v0`` is ``(C, 7, 7)``. Returns ``(d,)``.
    """
    x = check_finite(x, "x")
    d = x.shape[-1]
    if dw.w1.shape[0] != d:
        raise DimensionError(f"filter generator expects dimension {dw.w1.shape[0]}, got {d}")
    c = v0.shape[0]
    if dw.w1.shape[2] != c:
        raise DimensionError(f"feature map has {c} channels, generator expects {dw.w1.shape[2]}")
    f1 = np.tensordot(x, dw.w1, axes=1)  # (K1, C)
    f2 = np.tensordot(x, dw.w2, axes=1)  # (C, K1)
    cols = v0.reshape(c, -1).T  # (HW, C): layer norm runs over channels per location
    v1 = relu(w.norm(prefix + "dc1", cols @ f1.T))  # (HW, K1)
    v2 = relu(w.norm(prefix + "dc2", v1 @ f2.T))  # (HW, C)
    flat = v2.T.reshape(-1)  # channel-major flatten, matches (C, H, W)
    return w.norm(prefix + "dcout", x + relu(w.norm(prefix + "dcv", linear(dw.wv, flat))))


def e2r_fusion(f_s, f_o, f_r, p_s, p_o, w: HeadWeights):
    """Inject subject/object features and positions into the relation vector."""
    h_r = linear(w.e2r_x, relu(w.norm("e2r_s", linear(w.e2r_s, f_s)))) + \
        linear(w.e2r_y, relu(w.norm("e2r_o", linear(w.e2r_o, f_o))))
    pos = linear(w.e2r_pr, relu(linear(w.e2r_ps, p_s) + linear(w.e2r_po, p_o)))
    return w.norm("e2r", f_r + h_r + pos)


def relation_logits(f_s, f_o, f_r, w: HeadWeights):
    """Add the object-feature branch to the main relation logits ``f_r``."""
    g_s = w.norm("rc_s", linear(w.rc_s, f_s))
    g_o = w.norm("rc_o", linear(w.rc_o, f_o))
    diff = g_s - g_o
    g_so = relu(g_s + g_o) - diff * diff
    return f_r + linear(w.rc_cls, relu(g_so))


def _ffn(x, w1, w2, w: HeadWeights, site: str):
    return w.norm(site, x + linear(w2, relu(linear(w1, x))))


def apply_deltas(boxes, deltas) -> np.ndarray:
    """Shift centers by ``(dx*w, dy*h)`` and scale sizes by ``exp(dw), exp(dh)``."""
    b = np.asarray(boxes, dtype=np.float64)
    d = np.asarray(deltas, dtype=np.float64)
    out = np.empty_like(b)
    out[..., 0] = b[..., 0] + d[..., 0] * b[..., 2]
    out[..., 1] = b[..., 1] + d[..., 1] * b[..., 3]
    out[..., 2] = b[..., 2] * np.exp(d[..., 2])
    out[..., 3] = b[..., 3] * np.exp(d[..., 3])
    return out


# ----------------------------------------------------------------------------
# head and cascade

@dataclass
class TripletQuery:
    """Batch of ``N`` queries held row-stacked."""
    sub_boxes: np.ndarray  # (N, 4)
    obj_boxes: np.ndarray
    sub_content: np.ndarray  # (N, d_obj)
    obj_content: np.ndarray
    rel_content: np.ndarray  # (N, d_rel)

    def __post_init__(self):
        self.sub_boxes = check_boxes(np.atleast_2d(self.sub_boxes))
        self.obj_boxes = check_boxes(np.atleast_2d(self.obj_boxes))
        n = len(self.sub_boxes)
        for name in ("obj_boxes", "sub_content", "obj_content", "rel_content"):
            a = getattr(self, name)
            if len(a) != n:
                raise DimensionError(f"{name} has {len(a)} rows, expected {n}")
            check_finite(a, name)

    def __len__(self):
        return len(self.sub_boxes)

    def permute(self, perm) -> "TripletQuery":
        perm = np.asarray(perm)
        return TripletQuery(self.sub_boxes[perm], self.obj_boxes[perm], self.sub_content[perm],
                            self.obj_content[perm], self.rel_content[perm])


@dataclass
class HeadOutput:
    queries: TripletQuery  # refined, fed to the next head
    sub_logits: np.ndarray
    obj_logits: np.ndarray
    rel_logits: np.ndarray

    @property
    def sub_boxes(self):
        return self.queries.sub_boxes

    @property
    def obj_boxes(self):
        return self.queries.obj_boxes

    def permute(self, perm) -> "HeadOutput":
        perm = np.asarray(perm)
        return HeadOutput(self.queries.permute(perm), self.sub_logits[perm], self.obj_logits[perm],
                          self.rel_logits[perm])


def head_forward(q: TripletQuery, fmap: FeatureMap, w: HeadWeights, heads: int = 8,
                 positional: bool = True, pos_boxes=None) -> HeadOutput:
    """One refinement step over all queries.

    ``heads`` is the attention head count. Positional encodings come from
    the query boxes, or from ``pos_boxes = (sub, obj)`` when given; with
    ``positional=False`` they are zero.
    """
    n = len(q)
    if n == 0:
        raise ValueError("head_forward needs at least one query")
    d = q.sub_content.shape[1]
    if positional:
        sb, ob = (q.sub_boxes, q.obj_boxes) if pos_boxes is None else pos_boxes
        p_s = box_positional_encoding(sb, d)
        p_o = box_positional_encoding(ob, d)
    else:
        p_s = p_o = np.zeros((n, d))

    # object pair detection
    xs_f, xo_f = pair_fusion(q.sub_content, q.obj_content, p_s, p_o, w)
    tokens = np.concatenate([q.sub_content, q.obj_content])
    qk = np.concatenate([xs_f, xo_f])
    tokens = w.norm("attn", tokens + mh_attention(tokens, heads, w.attn, qk=qk))
    x_s, x_o = tokens[:n], tokens[n:]

    f_s = np.stack([dynamic_conv(x_s[i], fmap.roi_pool(q.sub_boxes[i]), w.dc_obj, w) for i in range(n)])
    f_o = np.stack([dynamic_conv(x_o[i], fmap.roi_pool(q.obj_boxes[i]), w.dc_obj, w) for i in range(n)])
    f_s = _ffn(f_s, w.obj_ffn1, w.obj_ffn2, w, "ffn")
    f_o = _ffn(f_o, w.obj_ffn1, w.obj_ffn2, w, "ffn")
    sub_logits, obj_logits = linear(w.obj_cls, f_s), linear(w.obj_cls, f_o)
    sub_boxes = apply_deltas(q.sub_boxes, linear(w.obj_reg, f_s))
    obj_boxes = apply_deltas(q.obj_boxes, linear(w.obj_reg, f_o))

    # relation recognition; regions are the refined boxes
    union = paired_union_box(sub_boxes, obj_boxes)
    f_r = np.empty_like(q.rel_content)
    for i in range(n):
        x = q.rel_content[i]
        r_pair = 0.5 * (dynamic_conv(x, fmap.roi_pool(sub_boxes[i]), w.dc_rel, w, "r")
                        + dynamic_conv(x, fmap.roi_pool(obj_boxes[i]), w.dc_rel, w, "r"))
        f_r[i] = dynamic_conv(r_pair, fmap.roi_pool(union[i]), w.dc_rel, w, "r")
    f_r = e2r_fusion(f_s, f_o, f_r, p_s, p_o, w)
    f_r = _ffn(f_r, w.rel_ffn1, w.rel_ffn2, w, "rffn")
    rel = relation_logits(f_s, f_o, linear(w.rel_cls, f_r), w)

    refined = TripletQuery(sub_boxes, obj_boxes, f_s, f_o, f_r)
    return HeadOutput(refined, sub_logits, obj_logits, rel)


def cascade_forward(q: TripletQuery, fmap: FeatureMap, weights: list[HeadWeights], heads: int = 8,
                    positional: bool = True, positions: str = "refined") -> list[HeadOutput]:
    """Run the heads in sequence; returns every head's output.

    ``positions="refined"`` encodes each head's own input boxes;
    ``"initial"`` keeps the encodings of the first head's boxes throughout.
    """
    if positions not in ("refined", "initial"):
        raise ValueError(f"positions must be 'refined' or 'initial', got {positions!r}")
    fixed = (q.sub_boxes, q.obj_boxes) if positions == "initial" else None
    outs = []
    for w in weights:
        out = head_forward(q, fmap, w, heads, positional, fixed)
        outs.append(out)
        q = out.queries
    return outs


def init_queries(n: int, dims: HeadDims, seed: int = 0) -> TripletQuery:
    """Random learnable-query stand-ins: boxes spread over the image, small content."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.2, 0.8, (n, 2, 2))
    sizes = rng.uniform(0.1, 0.4, (n, 2, 2))
    sub = np.concatenate([centers[:, 0], sizes[:, 0]], axis=1)
    obj = np.concatenate([centers[:, 1], sizes[:, 1]], axis=1)
    return TripletQuery(sub, obj, rng.standard_normal((n, dims.d_obj)) * 0.1,
                        rng.standard_normal((n, dims.d_obj)) * 0.1, rng.standard_normal((n, dims.d_rel)) * 0.1)

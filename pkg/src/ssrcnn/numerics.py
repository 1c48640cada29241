"""Dense numeric kernels shared by the detection heads and the loss checks.

Everything is float64 numpy. Matrices act on column vectors (``W @ x``);
batched inputs are row-stacked, so a batch is multiplied as ``X @ W.T``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LN_EPS = 1e-5


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, name: str = "input") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return x


def relu(x):
    return np.maximum(x, 0.0)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x, gain=None, bias=None, eps: float = LN_EPS):
    """Normalize over the last axis, then apply the optional affine map."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and np.shape(p) != (d,):
            raise DimensionError(f"layer_norm {name} has shape {np.shape(p)}, expected ({d},)")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def linear(W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``W @ x`` for a single vector or row-stacked batch ``x``."""
    W = np.asarray(W)
    x = np.asarray(x)
    if W.shape[-1] != x.shape[-1]:
        raise DimensionError(f"matrix {W.shape} cannot act on input of dimension {x.shape[-1]}")
    return x @ W.T


@dataclass
class AttentionWeights:
    wq: np.ndarray  # (d, d)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    @property
    def dim(self) -> int:
        return self.wq.shape[0]


def mh_attention(x: np.ndarray, heads: int, w: AttentionWeights, qk: np.ndarray | None = None,
                 return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the rows of ``x``.

    Queries and keys are projected from ``qk`` (defaults to ``x``); values
    always come from ``x``. Returns an array shaped like ``x`` and, if
    requested, the ``(heads, N, N)`` attention matrices.
    """
    x = np.asarray(x, dtype=np.float64)
    qk = x if qk is None else np.asarray(qk, dtype=np.float64)
    n, d = x.shape
    if qk.shape != x.shape:
        raise DimensionError(f"query/key source {qk.shape} does not match values {x.shape}")
    if d % heads:
        raise DimensionError(f"dimension {d} not divisible by {heads} heads")
    dh = d // heads
    q = linear(w.wq, qk).reshape(n, heads, dh).transpose(1, 0, 2)
    k = linear(w.wk, qk).reshape(n, heads, dh).transpose(1, 0, 2)
    v = linear(w.wv, x).reshape(n, heads, dh).transpose(1, 0, 2)
    attn = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh), axis=-1)
    out = (attn @ v).transpose(1, 0, 2).reshape(n, d)
    out = linear(w.wo, out)
    if return_weights:
        return out, attn
    return out


def fd_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2 * h)
    return g

"""Dense numeric substrate: softmax, layer norm, cosine and the transformer
encoder forward pass.

Matrices are 2-D numpy arrays, rows are tokens (object regions). Everything
runs in float64; functions keep wider float inputs (longdouble) wide.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

import numpy as np


def _float(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.dtype.kind == "f" and a.dtype.itemsize >= 8 else a.astype(np.float64)


def softmax(v, axis: int = -1) -> np.ndarray:
    v = _float(v)
    top = v.max(axis=axis, keepdims=True)
    if np.isnan(top).any():  # max propagates NaN
        raise ValueError("softmax input contains NaN")
    e = np.exp(v - top)
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = _float(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def layer_norm(v, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then ``gain * . + bias``."""
    v = _float(v)
    mu = v.mean(axis=-1, keepdims=True)
    var = ((v - mu) ** 2).mean(axis=-1, keepdims=True)
    return (v - mu) / np.sqrt(var + eps) * gain + bias


def cosine(u, v) -> float:
    u, v = _float(u), _float(v)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


@dataclass
class LayerParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


LAYER_FIELDS = tuple(f.name for f in fields(LayerParams))


@dataclass
class EncoderParams:
    """Input projection followed by a stack of self-attention layers."""

    w_in: np.ndarray
    layers: list
    heads: int

    def __post_init__(self):
        d_m = self.d_m
        if d_m % self.heads:
            raise ValueError(f"{self.heads} heads do not divide model width {d_m}")
        for n, lp in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo"):
                if getattr(lp, name).shape != (d_m, d_m):
                    raise ValueError(f"layer {n} {name} has shape {getattr(lp, name).shape}, "
                                     f"expected {(d_m, d_m)}")
            d_ff = lp.w1.shape[1]
            if lp.w1.shape != (d_m, d_ff) or lp.w2.shape != (d_ff, d_m):
                raise ValueError(f"layer {n} MLP shapes {lp.w1.shape}/{lp.w2.shape} incompatible")

    @property
    def d_in(self) -> int:
        return self.w_in.shape[0]

    @property
    def d_m(self) -> int:
        return self.w_in.shape[1]

    def named_arrays(self) -> dict:
        out = {"w_in": self.w_in}
        for n, lp in enumerate(self.layers):
            for name in LAYER_FIELDS:
                out[f"layer{n}.{name}"] = getattr(lp, name)
        return out

    @classmethod
    def from_named_arrays(cls, arrays: dict, heads: int) -> "EncoderParams":
        n_layers = len({k.split(".")[0] for k in arrays if k.startswith("layer")})
        layers = [LayerParams(**{f: np.asarray(arrays[f"layer{n}.{f}"]) for f in LAYER_FIELDS})
                  for n in range(n_layers)]
        return cls(np.asarray(arrays["w_in"]), layers, heads)


def init_encoder(d_in: int, d_m: int = 16, heads: int = 2, layers: int = 1,
                 d_ff: Optional[int] = None, seed: int = 0) -> EncoderParams:
    """Seeded uniform(-0.1, 0.1) weights; layer norms start as identity affines."""
    rng = np.random.default_rng(seed)
    d_ff = d_ff or 2 * d_m

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    stack = [LayerParams(wq=u(d_m, d_m), wk=u(d_m, d_m), wv=u(d_m, d_m), wo=u(d_m, d_m),
                         w1=u(d_m, d_ff), b1=u(d_ff), w2=u(d_ff, d_m), b2=u(d_m),
                         ln1_g=np.ones(d_m), ln1_b=np.zeros(d_m),
                         ln2_g=np.ones(d_m), ln2_b=np.zeros(d_m))
             for _ in range(layers)]
    return EncoderParams(u(d_in, d_m), stack, heads)


def multi_head_attention(X, lp: LayerParams, heads: int) -> np.ndarray:
    """Scaled dot-product self-attention, heads split after projection."""
    n, d_m = X.shape
    d_h = d_m // heads
    q = (X @ lp.wq).reshape(n, heads, d_h).transpose(1, 0, 2)
    k = (X @ lp.wk).reshape(n, heads, d_h).transpose(1, 0, 2)
    v = (X @ lp.wv).reshape(n, heads, d_h).transpose(1, 0, 2)
    att = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(d_h))
    return (att @ v).transpose(1, 0, 2).reshape(n, d_m) @ lp.wo


def mha_forward(X, params: EncoderParams, layer: int) -> np.ndarray:
    """One encoder layer: LN(X + MH(X)) then LN(O + MLP(O))."""
    X = _float(X)
    if X.ndim != 2 or X.shape[1] != params.d_m:
        raise ValueError(f"layer input has shape {X.shape}, expected (N, {params.d_m})")
    lp = params.layers[layer]
    o = layer_norm(X + multi_head_attention(X, lp, params.heads), lp.ln1_g, lp.ln1_b)
    hidden = np.maximum(o @ lp.w1 + lp.b1, 0.0)
    return layer_norm(o + hidden @ lp.w2 + lp.b2, lp.ln2_g, lp.ln2_b)


def encode_layers(X, params: EncoderParams) -> list:
    """Outputs of every encoder layer for region features ``X`` (N x d_in)."""
    X = _float(X)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise ValueError(f"features have shape {X.shape}, encoder expects width {params.d_in}")
    h = X @ params.w_in
    outs = []
    for n in range(len(params.layers)):
        h = mha_forward(h, params, n)
        outs.append(h)
    return outs


def encode(X, params: EncoderParams) -> np.ndarray:
    return encode_layers(X, params)[-1]

"""Group-based differential memory attention.

Pipeline for one similar-image group: encode each image alone, encode the
row-concatenated group, subtract to get difference memories, compare the
target's difference memory with every similar image's (cosine, column max,
negative mean, softmax) and turn the resulting distinctiveness into
per-region attention that rescales the target memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import EncoderParams, encode, encode_layers, sigmoid, softmax  # noqa: F401  (encode re-exported)

DISTINCTIVE = "distinctive"
COMMON = "common"
OMEGA_INIT = 1.0
BIAS_INIT = 0.5


def encode_union(features: Sequence[np.ndarray], params: EncoderParams, per_layer: bool = False):
    """Jointly encode the concatenated group and split back per image.

    Returns one matrix per image, or with ``per_layer`` a list over layers of
    such lists.
    """
    if not features:
        raise ValueError("encode_union needs at least one image")
    counts = [x.shape[0] for x in features]
    layers = encode_layers(np.concatenate(features, axis=0), params)
    cuts = np.cumsum(counts)[:-1]
    split = [np.split(out, cuts, axis=0) for out in layers]
    return split if per_layer else split[-1]


def memory_difference(m, m_union) -> np.ndarray:
    m, m_union = np.asarray(m), np.asarray(m_union)
    if m.shape != m_union.shape:
        raise ValueError(f"memory shapes differ: {m.shape} vs {m_union.shape}")
    return m - m_union


@dataclass
class MemoryBank:
    """Solo memories, union segments and their differences, indexed [layer][image]."""

    memories: list
    unions: list
    diffs: list

    @property
    def n_images(self) -> int:
        return len(self.diffs[0])


def build_memory_bank(features: Sequence[np.ndarray], params: EncoderParams,
                      per_layer: bool = False) -> MemoryBank:
    solo = [encode_layers(x, params) for x in features]
    union = encode_union(features, params, per_layer=True)
    layers = range(len(params.layers)) if per_layer else [len(params.layers) - 1]
    mem = [[solo[k][l] for k in range(len(features))] for l in layers]
    uni = [union[l] for l in layers]
    diffs = [[memory_difference(m, u) for m, u in zip(ms, us)] for ms, us in zip(mem, uni)]
    return MemoryBank(mem, uni, diffs)


def _unit_rows(m: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(m, axis=1, keepdims=True)
    # zero rows stay zero, so their cosine with anything is 0
    return np.divide(m, norm, out=np.zeros_like(m, dtype=np.float64), where=norm > 0)


def similarity_matrix(m_similar, m_target) -> np.ndarray:
    """R[i, j] = cos(similar row i, target row j), shape (N_k, N_0)."""
    m_similar, m_target = np.asarray(m_similar, float), np.asarray(m_target, float)
    if m_similar.shape[1] != m_target.shape[1]:
        raise ValueError("memories must share width")
    return np.clip(_unit_rows(m_similar) @ _unit_rows(m_target).T, -1.0, 1.0)


def object_image_similarity(r) -> np.ndarray:
    r = np.asarray(r)
    if r.size == 0:
        raise ValueError("empty similarity matrix")
    return r.max(axis=0)


def distinctiveness_scores(r_tildes: Sequence[np.ndarray]):
    """Raw scores d = -mean_k R~_k and their softmax D."""
    if len(r_tildes) == 0:
        raise ValueError("distinctiveness needs at least one similar image")
    stacked = np.stack([np.asarray(r, float) for r in r_tildes])
    d = -stacked.sum(axis=0) / len(r_tildes)
    return d, softmax(d)


def distinctive_attention(D, omega: float, bias: float, indicator: str = DISTINCTIVE) -> np.ndarray:
    D = np.asarray(D, float)
    if indicator == COMMON:
        return np.ones_like(D)
    if indicator != DISTINCTIVE:
        raise ValueError(f"unknown indicator {indicator!r}")
    if omega < 0 or bias < 0:
        raise AssertionError(f"attention parameters must be clipped nonnegative (omega={omega}, b={bias})")
    return omega * D + bias


def weight_memory(m, a) -> np.ndarray:
    m, a = np.asarray(m), np.asarray(a)
    if a.shape != (m.shape[0],):
        raise ValueError(f"{a.shape[0] if a.ndim else 0} weights for {m.shape[0]} memory rows")
    return a[:, None] * m


@dataclass
class AttentionState:
    R: list
    R_tilde: list
    d: np.ndarray
    D: np.ndarray
    A: np.ndarray
    omega: float
    bias: float

    def to_dict(self) -> dict:
        return {"R": [r.tolist() for r in self.R], "R_tilde": [r.tolist() for r in self.R_tilde],
                "d": self.d.tolist(), "D": self.D.tolist(), "A": self.A.tolist(),
                "omega": self.omega, "bias": self.bias}


def attend(diffs: Sequence[np.ndarray], target: int = 0, omega: float = OMEGA_INIT,
           bias: float = BIAS_INIT, indicator: str = DISTINCTIVE) -> AttentionState:
    """GDMA for image ``target`` of a group given every image's difference memory."""
    m0 = diffs[target]
    others = [m for k, m in enumerate(diffs) if k != target]
    R = [similarity_matrix(m, m0) for m in others]
    R_tilde = [object_image_similarity(r) for r in R]
    if R_tilde:
        d, D = distinctiveness_scores(R_tilde)
    else:
        # lone image: nothing to contrast against
        d = np.zeros(m0.shape[0])
        D = softmax(d)
    return AttentionState(R, R_tilde, d, D, distinctive_attention(D, omega, bias, indicator),
                          omega, bias)


@dataclass
class TargetView:
    """What the decoder and classifier see for one target: its difference
    memory rows (stacked over layers) and their distinctiveness D."""

    memory: np.ndarray
    D: np.ndarray
    states: list = field(default_factory=list)


def target_view(bank: MemoryBank, target: int, omega: float = OMEGA_INIT,
                bias: float = BIAS_INIT) -> TargetView:
    states = [attend(layer, target, omega, bias) for layer in bank.diffs]
    return TargetView(np.concatenate([layer[target] for layer in bank.diffs], axis=0),
                      np.concatenate([s.D for s in states]), states)


def classify_memory(m_weighted, w, b) -> np.ndarray:
    """Mean-pool rows, linear map, elementwise sigmoid."""
    m_weighted = np.asarray(m_weighted)
    if m_weighted.shape[1] != w.shape[0]:
        raise ValueError(f"classifier expects width {w.shape[0]}, memory has {m_weighted.shape[1]}")
    return sigmoid(m_weighted.mean(axis=0) @ w + b)


def toy_decoder_step(m_weighted, prev: int, params: dict, cache: Optional[dict] = None) -> np.ndarray:
    """One decoding step: previous-token embedding queries the weighted memory
    by dot-product attention; embedding + context -> linear -> softmax.

    ``params`` holds ``embed`` (V x d), ``dec_wq`` (d x d), ``dec_wo`` (d x V)
    and ``dec_bo`` (V). Token 0 is the end token and also starts decoding.
    """
    embed = params["embed"]
    if not 0 <= prev < embed.shape[0]:
        raise ValueError(f"unknown token id {prev}")
    d = embed.shape[1]
    e = embed[prev]
    q = e @ params["dec_wq"]
    alpha = softmax(m_weighted @ q / np.sqrt(d))
    ctx = alpha @ m_weighted
    h = e + ctx
    p = softmax(h @ params["dec_wo"] + params["dec_bo"])
    if cache is not None:
        cache.update(prev=prev, e=e, q=q, alpha=alpha, h=h, p=p)
    return p


def decoder_steps(m_weighted, prev_ids: Sequence[int], params: dict, cache: Optional[dict] = None):
    """Teacher-forced decoding: ``toy_decoder_step`` for every previous token at
    once, returning a (T x V) matrix of step distributions."""
    embed = params["embed"]
    prev_ids = np.asarray(prev_ids, dtype=int)
    if prev_ids.size and (prev_ids.min() < 0 or prev_ids.max() >= embed.shape[0]):
        raise ValueError(f"token ids out of range [0, {embed.shape[0]})")
    e = embed[prev_ids]
    q = e @ params["dec_wq"]
    alpha = softmax(q @ m_weighted.T / np.sqrt(embed.shape[1]))
    h = e + alpha @ m_weighted
    p = softmax(h @ params["dec_wo"] + params["dec_bo"])
    if cache is not None:
        cache.update(prev=prev_ids, e=e, q=q, alpha=alpha, h=h, p=p)
    return p


EOS = 0


def greedy_decode(m_weighted, params: dict, max_len: int = 16) -> list:
    """Token ids up to (excluding) the end token."""
    out = []
    prev = EOS
    for _ in range(max_len):
        prev = int(np.argmax(toy_decoder_step(m_weighted, prev, params)))
        if prev == EOS:
            break
        out.append(prev)
    return out


def sample_decode(m_weighted, params: dict, rng: np.random.Generator, max_len: int = 16) -> list:
    """Sampled token ids, including the end token when one is drawn."""
    out = []
    prev = EOS
    for _ in range(max_len):
        p = toy_decoder_step(m_weighted, prev, params)
        prev = int(rng.choice(len(p), p=p / p.sum()))
        out.append(prev)
        if prev == EOS:
            break
    return out

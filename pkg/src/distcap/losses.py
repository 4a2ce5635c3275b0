"""Training losses, their hand-derived gradients and the SCST step.

Trainable parameters live in a flat dict of arrays:

    omega, bias          GDMA attention scalars (0-d arrays, kept >= 0)
    embed, dec_wq,
    dec_wo, dec_bo       toy decoder
    cls_w, cls_b         memory classifier

The encoder is frozen, so the distinctiveness scores D of a target are
constants and dA/domega = D, dA/dbias = 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gdma import BIAS_INIT, EOS, OMEGA_INIT, decoder_steps, greedy_decode, sample_decode, sigmoid
from .metrics import IdfTable, per_image_similarity

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
PARAM_NAMES = ("omega", "bias", "embed", "dec_wq", "dec_wo", "dec_bo", "cls_w", "cls_b")


def _nll(p):
    return -np.log(np.maximum(p, PROB_FLOOR))


def profile_targets(profile, vocab):
    """Vocabulary ids and relatedness weights of a profile's distinctive words.

    Out-of-vocabulary words are dropped with a warning; returns
    ``(ids, weights, n_skipped)``.
    """
    ids, weights, skipped = [], [], 0
    for w in sorted(profile.omega):
        if w in vocab:
            ids.append(vocab.index[w])
            weights.append(profile.weights[w])
        else:
            skipped += 1
    if skipped:
        log.warning("%d distinctive word(s) of %s are out of vocabulary", skipped, profile.target)
    return np.array(ids, dtype=int), np.array(weights, dtype=float), skipped


def xe_loss(step_probs: Sequence[np.ndarray], caption_ids: Sequence[int]) -> float:
    if len(step_probs) != len(caption_ids):
        raise ValueError(f"{len(step_probs)} step distributions for {len(caption_ids)} tokens")
    return float(sum(_nll(p[w]) for p, w in zip(step_probs, caption_ids)))


def weighted_distinctive_loss(step_probs, profile, vocab) -> float:
    """Relatedness-weighted negative log-probability of every distinctive word
    at every step, summed."""
    ids, weights, _ = profile_targets(profile, vocab)
    return float(sum(weights @ _nll(p[ids]) for p in step_probs)) if len(ids) else 0.0


def mem_cls_loss(p_m, profile, vocab) -> float:
    ids, weights, _ = profile_targets(profile, vocab)
    return float(weights @ _nll(np.asarray(p_m)[ids])) if len(ids) else 0.0


def rl_reward(sampled, gts, idf: IdfTable) -> float:
    """Mean single-reference CIDEr of a sampled caption against the target GTs."""
    return per_image_similarity(sampled, gts, idf)


@dataclass
class LossBreakdown:
    xe: float
    rl: float
    dis: float
    mem: float
    alphas: tuple
    total: float


def combine(xe: float, rl: float, dis: float, mem: float, stage: int = 1) -> LossBreakdown:
    """Stage-weighted total with the distinctive and memory-classification
    terms each scaled to a quarter of the base loss (XE in stage 1, the RL
    loss magnitude in stage 2)."""
    if stage == 1:
        a_c, a_r, base = 1.0, 0.0, xe
    elif stage == 2:
        a_c, a_r, base = 0.0, 1.0, abs(rl)
    else:
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    a_d = 0.25 * base / dis if dis > 0 else 0.0
    a_m = 0.25 * base / mem if mem > 0 else 0.0
    total = a_c * xe + a_r * rl + a_d * dis + a_m * mem
    return LossBreakdown(xe, rl, dis, mem, (a_c, a_r, a_d, a_m), total)


def init_trainables(d_m: int, vocab_size: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-0.1, 0.1, size=shape)

    return {
        "omega": np.array(OMEGA_INIT), "bias": np.array(BIAS_INIT),
        "embed": u(vocab_size, d_m), "dec_wq": u(d_m, d_m),
        "dec_wo": u(d_m, vocab_size), "dec_bo": u(vocab_size),
        "cls_w": u(d_m, vocab_size), "cls_b": u(vocab_size),
    }


def clip_attention_params(params: dict) -> None:
    params["omega"] = np.maximum(params["omega"], 0.0)
    params["bias"] = np.maximum(params["bias"], 0.0)


@dataclass
class Example:
    """One supervised decoding of a target: its memory rows, distinctiveness,
    indicator, teacher-forced token sequence and distinctive-word targets."""

    memory: np.ndarray
    D: np.ndarray
    distinctive: bool
    tokens: Sequence[int]  # caption ids, end token appended by the caller or not
    dis_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    dis_w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def inputs(self):
        return [EOS, *self.tokens[:-1]]


def attention_weights(params: dict, ex: Example) -> np.ndarray:
    if ex.distinctive:
        return params["omega"] * ex.D + params["bias"]
    return np.ones_like(ex.D)


def forward(params: dict, ex: Example):
    """Loss components (xe, dis, mem) of one example plus the backward cache."""
    a = attention_weights(params, ex)
    mw = a[:, None] * ex.memory
    steps: dict = {}
    p = decoder_steps(mw, ex.inputs, params, steps)
    tokens = np.asarray(ex.tokens, dtype=int)
    xe = _nll(p[np.arange(len(tokens)), tokens]).sum()
    dis = (_nll(p[:, ex.dis_ids]) @ ex.dis_w).sum() if len(ex.dis_ids) else 0.0
    pooled = mw.mean(axis=0)
    pm = sigmoid(pooled @ params["cls_w"] + params["cls_b"])
    mem = ex.dis_w @ _nll(pm[ex.dis_ids]) if len(ex.dis_ids) else 0.0
    cache = {"mw": mw, "steps": steps, "pooled": pooled, "pm": pm}
    return (xe, dis, mem), cache


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def backward(params: dict, ex: Example, cache: dict, coef_xe: float = 1.0, coef_dis: float = 1.0,
             coef_mem: float = 1.0, grads: Optional[dict] = None) -> dict:
    """Accumulate d(coef_xe*xe + coef_dis*dis + coef_mem*mem)/dparams into ``grads``.

    ``ex.dis_ids`` must not repeat.
    """
    g = grads if grads is not None else zero_grads(params)
    mw = cache["mw"]
    n_rows, d = mw.shape
    st = cache["steps"]
    p, alpha = st["p"], st["alpha"]
    T = p.shape[0]
    rows = np.arange(T)
    tokens = np.asarray(ex.tokens, dtype=int)
    # d(-log p_k)/dlogits = p - onehot(k); terms held at the floor are constant
    dz = np.zeros_like(p)
    if coef_xe:
        live = coef_xe * (p[rows, tokens] > PROB_FLOOR)
        dz += live[:, None] * p
        np.subtract.at(dz, (rows, tokens), live)
    if coef_dis and len(ex.dis_ids):
        w = coef_dis * ex.dis_w * (p[:, ex.dis_ids] > PROB_FLOOR)
        dz += w.sum(axis=1, keepdims=True) * p
        dz[:, ex.dis_ids] -= w
    g["dec_wo"] += st["h"].T @ dz
    g["dec_bo"] += dz.sum(axis=0)
    dh = dz @ params["dec_wo"].T
    dalpha = dh @ mw.T
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True)) / np.sqrt(d)
    dmw = alpha.T @ dh + ds.T @ st["q"]
    dq = ds @ mw
    g["dec_wq"] += st["e"].T @ dq
    np.add.at(g["embed"], st["prev"], dh + dq @ params["dec_wq"].T)
    if coef_mem and len(ex.dis_ids):
        pm = cache["pm"]
        dz_m = np.zeros_like(pm)
        live = pm[ex.dis_ids] > PROB_FLOOR
        dz_m[ex.dis_ids] = -coef_mem * ex.dis_w * live * (1.0 - pm[ex.dis_ids])
        g["cls_w"] += np.outer(cache["pooled"], dz_m)
        g["cls_b"] += dz_m
        dmw = dmw + (params["cls_w"] @ dz_m)[None, :] / n_rows
    if ex.distinctive:
        da = (dmw * ex.memory).sum(axis=1)
        g["omega"] += ex.D @ da
        g["bias"] += da.sum()
    return g


def total_loss(params: dict, examples: Sequence[Example], coefs=(1.0, 1.0, 1.0)) -> float:
    tot = 0.0
    for ex in examples:
        (xe, dis, mem), _ = forward(params, ex)
        tot = tot + coefs[0] * xe + coefs[1] * dis + coefs[2] * mem
    return tot


def analytic_gradients(params: dict, examples: Sequence[Example], coefs=(1.0, 1.0, 1.0)) -> dict:
    """Gradient of ``sum(coefs . (xe, dis, mem))`` over ``examples``."""
    g = zero_grads(params)
    for ex in examples:
        _, cache = forward(params, ex)
        backward(params, ex, cache, *coefs, grads=g)
    return g


def reinforce_gradient(params: dict, memory, D, sampled: Sequence[int], advantage: float) -> dict:
    """Gradient of ``-advantage * log p(sampled)`` with distinctive attention."""
    ex = Example(np.asarray(memory), np.asarray(D), True, list(sampled))
    _, cache = forward(params, ex)
    return backward(params, ex, cache, coef_xe=advantage, coef_dis=0.0, coef_mem=0.0)


@dataclass
class ScstResult:
    grads: dict
    sampled: list
    greedy: list
    reward_sampled: float
    reward_greedy: float

    @property
    def advantage(self) -> float:
        return self.reward_sampled - self.reward_greedy


def scst_step(params: dict, memory, D, gts, idf: IdfTable, vocab, rng: np.random.Generator,
              max_len: int = 16) -> ScstResult:
    """Self-critical REINFORCE: sampled-caption reward minus greedy-caption
    reward times the gradient of the sampled caption's log-probability."""
    ex = Example(np.asarray(memory), np.asarray(D), True, [])
    mw = attention_weights(params, ex)[:, None] * ex.memory
    sampled = sample_decode(mw, params, rng, max_len)
    greedy = greedy_decode(mw, params, max_len)
    r_s = rl_reward(vocab.decode(sampled), gts, idf)
    r_g = rl_reward(vocab.decode(greedy), gts, idf)
    if vocab.decode(sampled) == vocab.decode(greedy):
        grads = zero_grads(params)
    else:
        grads = reinforce_gradient(params, memory, D, sampled, r_s - r_g)
    return ScstResult(grads, sampled, greedy, r_s, r_g)


def numeric_gradients(params: dict, loss_fn, h: float = 1e-5, names=PARAM_NAMES,
                      dtype=np.longdouble) -> dict:
    """Central finite differences of ``loss_fn(params)`` for every coordinate.

    The loss is re-evaluated with parameters promoted to ``dtype`` so that
    rounding in the forward pass stays well below the truncation error.
    """
    wide = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    out = {}
    for name in names:
        arr = wide[name]
        grad = np.zeros(arr.shape)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn(wide)
            flat[i] = orig - h
            minus = loss_fn(wide)
            flat[i] = orig
            grad.reshape(-1)[i] = float((plus - minus) / (2 * h))
        out[name] = grad
    return out


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)

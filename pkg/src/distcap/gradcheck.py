"""Finite-difference verification of the hand-derived loss gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gdma import build_memory_bank, target_view
from .losses import (PARAM_NAMES, Example, analytic_gradients, init_trainables, numeric_gradients,
                     relative_error, total_loss)
from .tensor import init_encoder

FD_STEP = 1e-5
REL_TOL = 1e-4


@dataclass
class Instance:
    params: dict
    examples: list


def random_instance(seed: int, max_rows: int = 8, max_width: int = 16, max_vocab: int = 20) -> Instance:
    """A small random group, target view and two supervised decodings (one
    distinctive, one common) with random distinctive words and weights."""
    rng = np.random.default_rng(seed)
    d_m = 2 * int(rng.integers(1, max_width // 2 + 1))
    vocab = int(rng.integers(3, max_vocab + 1))
    K = int(rng.integers(1, 4))
    d_in = int(rng.integers(2, 9))
    feats = [rng.normal(size=(int(rng.integers(1, max_rows + 1)), d_in)) for _ in range(K + 1)]
    encoder = init_encoder(d_in, d_m, heads=2, layers=1, seed=int(rng.integers(1 << 30)))
    view = target_view(build_memory_bank(feats, encoder), 0)
    params = init_trainables(d_m, vocab, seed=int(rng.integers(1 << 30)))
    # move away from the near-uniform init so gradients are not all tiny
    for k in PARAM_NAMES[2:]:
        params[k] = params[k] * rng.uniform(1, 20)
    params["omega"] = np.array(rng.uniform(0.2, 3.0))
    params["bias"] = np.array(rng.uniform(0.1, 1.5))
    n_dis = int(rng.integers(0, min(3, vocab - 1) + 1))
    dis_ids = rng.choice(np.arange(1, vocab), size=n_dis, replace=False)
    dis_w = rng.uniform(0.05, 1.0, size=n_dis)
    if n_dis:
        dis_w[int(rng.integers(n_dis))] = 1.0
    examples = []
    for distinctive in (True, False):
        T = int(rng.integers(1, 6))
        tokens = [*map(int, rng.integers(1, vocab, size=T - 1)), 0]
        examples.append(Example(view.memory, view.D, distinctive, tokens, dis_ids, dis_w))
    return Instance(params, examples)


def check_instance(inst: Instance, h: float = FD_STEP) -> dict:
    """Max relative error per parameter between analytic and central-difference
    gradients of xe + dis + mem."""
    analytic = analytic_gradients(inst.params, inst.examples)
    numeric = numeric_gradients(inst.params, lambda p: total_loss(p, inst.examples), h=h)
    return {k: float(relative_error(analytic[k], numeric[k]).max()) for k in PARAM_NAMES}


def run(seeds) -> dict:
    """Worst relative error per parameter over instances built from ``seeds``."""
    worst = {k: 0.0 for k in PARAM_NAMES}
    for s in seeds:
        for k, v in check_instance(random_instance(s)).items():
            worst[k] = max(worst[k], v)
    return worst

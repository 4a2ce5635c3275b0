"""Toy-scale training loop over similar-image groups.

Every image of every group takes the target role in turn. The encoder is
frozen, so each target's difference memory and distinctiveness scores are
computed once; the GDMA scalars, the toy decoder and the memory classifier
are trained by plain gradient descent.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import CaptionDataset
from .distinct import DISTINCTIVE, DistinctProfile, distinct_words, indicate_captions
from .gdma import EOS, build_memory_bank, greedy_decode, target_view
from .groups import ImageGroup
from .losses import (Example, PARAM_NAMES, attention_weights, backward, clip_attention_params, combine,
                     forward, init_trainables, profile_targets, scst_step, zero_grads)
from .metrics import IdfTable, dis_word_rate, idf_build
from .tensor import EncoderParams, init_encoder
from .text import Vocab


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, losses: dict):
        self.step = step
        super().__init__(f"non-finite loss at step {step}: {losses}")


@dataclass
class ToyConfig:
    K: int = 5
    seed: int = 0
    steps: int = 500
    learning_rate: float = 0.05
    d_m: int = 32
    heads: int = 2
    layers: int = 1
    vocab: int = 30
    n_groups: int = 3
    regions: int = 4
    feature_dim: int = 32
    feature_scale: float = 32.0
    stage: int = 1
    indicator: str = "median"
    tau: Optional[float] = None
    per_layer: bool = False
    max_len: int = 12
    captions: Optional[str] = None
    features: Optional[str] = None
    groups: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class Target:
    """A target role within a group and its supervised examples."""

    image_id: str
    memory: np.ndarray
    D: np.ndarray
    region_counts: int
    gts: list
    profile: DistinctProfile
    examples: list


@dataclass
class TrainState:
    params: dict
    encoder: EncoderParams
    vocab: Vocab
    step: int = 0
    seed: int = 0
    targets: list = field(default_factory=list, repr=False)

    def weighted_memory(self, target: Target) -> np.ndarray:
        ex = Example(target.memory, target.D, True, [])
        return attention_weights(self.params, ex)[:, None] * target.memory

    def greedy_captions(self, max_len: int = 12) -> dict:
        """Greedy decodes (distinctive attention) keyed by target image id.

        Leftover duplicates keep the first target role seen.
        """
        out = {}
        for t in self.targets:
            if t.image_id not in out:
                out[t.image_id] = self.vocab.decode(greedy_decode(self.weighted_memory(t), self.params, max_len))
        return out


@dataclass
class PlantedTask:
    dataset: CaptionDataset
    features: dict
    groups: list
    vocab: Vocab
    planted_word: dict
    planted_region: int


NOUNS = ["dog", "bus", "kite", "horse", "train", "pizza"]
PLANTED = ["frisbee", "hat", "umbrella", "bench", "car", "ball", "tie", "bag", "clock", "boat",
           "bird", "cake", "lamp", "vase", "book", "chair", "fence", "flag", "tree", "sign",
           "cup", "bowl", "bike", "rope", "tent", "net", "bell", "drum", "map", "key"]
FILLERS = ["the", "on", "in", "of", "near", "by", "at", "and", "its", "big", "small", "red",
           "blue", "green", "old", "new", "two", "three", "some", "many"]


def make_planted_task(n_groups: int = 3, group_size: int = 6, vocab_size: int = 30, regions: int = 4,
                      feature_dim: int = 32, seed: int = 0,
                      feature_scale: float = 32.0) -> PlantedTask:
    """Synthetic groups where every image has one unique region and one unique word.

    Images of a group share ``regions - 1`` noisy prototype regions and a noun;
    the last region of each image is a random direction of its own, paired
    with a planted word. Captions: "a <noun> with <planted>" and "a <planted>".
    Large ``feature_scale`` makes the frozen encoder's attention content
    sensitive, which is what lets difference memories separate regions.
    """
    n_images = n_groups * group_size
    if n_groups > len(NOUNS) or n_images > len(PLANTED):
        raise ValueError("planted task too large for the built-in word lists")
    words = ["a", "with", *NOUNS[:n_groups], *PLANTED[:n_images]]
    if vocab_size < len(words) + 1:
        raise ValueError(f"vocab of {vocab_size} cannot hold the {len(words) + 1} task tokens")
    words += FILLERS[:vocab_size - 1 - len(words)]
    rng = np.random.default_rng(seed)
    images, features, groups, planted = {}, {}, [], {}
    for g in range(n_groups):
        protos = rng.normal(size=(regions - 1, feature_dim))
        ids = [f"g{g}_i{j}" for j in range(group_size)]
        for j, image_id in enumerate(ids):
            word = PLANTED[g * group_size + j]
            planted[image_id] = word
            images[image_id] = [f"a {NOUNS[g]} with {word}", f"a {word}"]
            common = protos + 0.05 * rng.normal(size=protos.shape)
            unique = rng.normal(size=(1, feature_dim))
            features[image_id] = feature_scale * np.concatenate([common, unique])
        groups.append(ImageGroup(ids[0], tuple(ids[1:])))
    return PlantedTask(CaptionDataset(images), features, groups, Vocab(words), planted, regions - 1)


def build_targets(groups, features: dict, dataset: CaptionDataset, encoder: EncoderParams, vocab: Vocab,
                  idf: IdfTable, config: ToyConfig, profiles: Optional[dict] = None) -> list:
    targets = []
    for group in groups:
        members = list(group.members)
        bank = build_memory_bank([features[m] for m in members], encoder, per_layer=config.per_layer)
        for k, image_id in enumerate(members):
            view = target_view(bank, k)
            others = tuple(m for m in members if m != image_id)
            role = ImageGroup(image_id, others)
            gts = dataset.tokens(image_id)
            if profiles and image_id in profiles:
                profile = profiles[image_id]
            else:
                omega = distinct_words(gts, [c for m in others for c in dataset.tokens(m)])
                profile = DistinctProfile(image_id, omega)
            ids, weights, _ = profile_targets(profile, vocab)
            labels = indicate_captions(gts, role, dataset, idf, config.indicator, config.tau).labels
            examples = [Example(view.memory, view.D, lab == DISTINCTIVE, [*vocab.encode(cap), EOS], ids, weights)
                        for cap, lab in zip(gts, labels)]
            targets.append(Target(image_id, view.memory, view.D, bank.diffs[-1][k].shape[0], gts, profile,
                                  examples))
    return targets


def _step_stage1(params, targets):
    fwd = []
    sums = np.zeros(3)
    for t in targets:
        n = len(t.examples)
        for ex in t.examples:
            losses, cache = forward(params, ex)
            fwd.append((ex, cache, n))
            sums += np.array([float(v) for v in losses]) / n
    br = combine(sums[0], 0.0, sums[1], sums[2], stage=1)
    a_c, _, a_d, a_m = br.alphas
    grads = zero_grads(params)
    for ex, cache, n in fwd:
        backward(params, ex, cache, a_c / n, a_d / n, a_m / n, grads=grads)
    return br, grads


def _step_stage2(params, targets, idf, vocab, rng, max_len):
    rl = 0.0
    rl_grads = zero_grads(params)
    fwd = []
    sums = np.zeros(2)
    for t in targets:
        res = scst_step(params, t.memory, t.D, t.gts, idf, vocab, rng, max_len)
        rl -= res.reward_sampled
        for k in PARAM_NAMES:
            rl_grads[k] += res.grads[k]
        ids, weights = t.examples[0].dis_ids, t.examples[0].dis_w
        ex = Example(t.memory, t.D, True, res.sampled or [EOS], ids, weights)
        (_, dis, mem), cache = forward(params, ex)
        fwd.append((ex, cache))
        sums += [float(dis), float(mem)]
    br = combine(0.0, rl, sums[0], sums[1], stage=2)
    _, _, a_d, a_m = br.alphas
    for ex, cache in fwd:
        backward(params, ex, cache, 0.0, a_d, a_m, grads=rl_grads)
    return br, rl_grads


def train_toy(groups, features: dict, dataset: CaptionDataset, config: ToyConfig,
              vocab: Optional[Vocab] = None, profiles: Optional[dict] = None,
              params: Optional[dict] = None):
    """Run ``config.steps`` full-batch gradient steps; returns (state, log).

    Each log entry holds the losses measured before that step's update and
    the clipped attention scalars after it.
    """
    d_in = next(iter(features.values())).shape[1]
    encoder = init_encoder(d_in, config.d_m, config.heads, config.layers, seed=config.seed)
    vocab = vocab or Vocab.from_captions(c for i in dataset for c in dataset.tokens(i))
    idf = idf_build(dataset)
    targets = build_targets(groups, features, dataset, encoder, vocab, idf, config, profiles)
    params = params or init_trainables(config.d_m, len(vocab), seed=config.seed + 1)
    rng = np.random.default_rng(config.seed)
    state = TrainState(params, encoder, vocab, 0, config.seed, targets)
    log = []
    for step in range(config.steps):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                if config.stage == 1:
                    br, grads = _step_stage1(params, targets)
                else:
                    br, grads = _step_stage2(params, targets, idf, vocab, rng, config.max_len)
        except ValueError as exc:  # NaN reached a softmax
            raise TrainingDiverged(step, {"error": str(exc)}) from exc
        entry = {"step": step, "L_xe": br.xe, "L_r": br.rl, "L_d": br.dis, "L_m": br.mem,
                 "alpha_d": br.alphas[2], "alpha_m": br.alphas[3], "total": br.total}
        if not all(math.isfinite(v) for v in entry.values()) or \
                not all(np.isfinite(grads[k]).all() for k in PARAM_NAMES):
            raise TrainingDiverged(step, entry)
        for k in PARAM_NAMES:
            params[k] = params[k] - config.learning_rate * grads[k]
        clip_attention_params(params)
        entry["omega"] = float(params["omega"])
        entry["b"] = float(params["bias"])
        log.append(entry)
        state.step = step + 1
    return state, log


def window_means(log: list, key: str = "total", window: int = 50) -> list:
    vals = [e[key] for e in log]
    return [float(np.mean(vals[i:i + window])) for i in range(0, len(vals), window)]


def corpus_dis_word_rate(state: TrainState, max_len: int = 12) -> Optional[float]:
    caps = state.greedy_captions(max_len)
    rates = []
    seen = set()
    for t in state.targets:
        if t.image_id in seen:
            continue
        seen.add(t.image_id)
        r = dis_word_rate(caps[t.image_id], t.profile.omega, t.gts)
        if r is not None:
            rates.append(r)
    return sum(rates) / len(rates) if rates else None


def region_attention(state: TrainState) -> list:
    """Distinctive-mode attention per target role, as (image id, A) pairs."""
    return [(t.image_id, attention_weights(state.params, Example(t.memory, t.D, True, [])))
            for t in state.targets]

"""Distinctive word sets, relatedness weights and caption indicators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .metrics import IdfTable, per_image_similarity
from .text import word_set

TEMPLATE = "this picture includes {}"

DISTINCTIVE = "distinctive"
COMMON = "common"


@dataclass
class DistinctProfile:
    target: str
    omega: frozenset
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = frozenset(self.omega)
        if not self.weights:
            self.weights = {w: 1.0 for w in self.omega}
        if set(self.weights) != set(self.omega):
            raise ValueError(f"weights for {self.target!r} are not keyed by its distinctive words")

    def to_dict(self) -> dict:
        return {"target": self.target, "omega": sorted(self.omega),
                "weights": {w: self.weights[w] for w in sorted(self.weights)}}

    @classmethod
    def from_dict(cls, d) -> "DistinctProfile":
        return cls(d["target"], frozenset(d["omega"]), {w: float(v) for w, v in d["weights"].items()})


@dataclass
class CaptionIndicator:
    labels: list  # DISTINCTIVE / COMMON, one per GT caption
    scores: list  # per-caption CIDErBtw

    @property
    def distinctive(self) -> list:
        return [lab == DISTINCTIVE for lab in self.labels]


def distinct_words(target_gts, similar_gts) -> frozenset:
    """Words of the target's GT captions that no similar-image caption uses."""
    return word_set(target_gts) - word_set(similar_gts)


def relatedness_weights(omega, sentence_embeddings, image_vec) -> dict:
    """Max-normalized dot products between "this picture includes <w>"
    embeddings and the image embedding.

    Negative dot products are clamped to 0; when none is positive every
    word gets weight 1.
    """
    image_vec = np.asarray(image_vec, dtype=np.float64)
    raw = {}
    for w in sorted(omega):
        key = TEMPLATE.format(w)
        if key not in sentence_embeddings:
            raise KeyError(f"no sentence embedding for distinctive word {w!r} ({key!r})")
        vec = sentence_embeddings.vector(key)
        if vec.shape != image_vec.shape:
            raise ValueError(f"embedding width {vec.shape[0]} != image width {image_vec.shape[0]}")
        raw[w] = max(0.0, float(np.dot(vec, image_vec)))
    top = max(raw.values(), default=0.0)
    if top <= 0.0:
        return {w: 1.0 for w in raw}
    return {w: v / top for w, v in raw.items()}


def group_profile(group, dataset, sentence_embeddings=None, image_embeddings=None) -> DistinctProfile:
    gts = dataset.tokens(group.target)
    others = [c for m in group.similars for c in dataset.tokens(m)]
    omega = distinct_words(gts, others)
    weights = None
    if sentence_embeddings is not None and image_embeddings is not None:
        weights = relatedness_weights(omega, sentence_embeddings, image_embeddings.vector(group.target))
    return DistinctProfile(group.target, omega, weights or {})


def indicate_captions(target_gts, group, dataset, idf: IdfTable, rule: str = "median",
                      tau: Optional[float] = None) -> CaptionIndicator:
    """Label each GT caption distinctive or common by its CIDErBtw against the
    similar images' GT sets.

    ``median``: strictly below the median of the target's captions.
    ``threshold``: strictly below ``tau``.
    """
    if not target_gts:
        raise ValueError("indicate_captions needs at least one GT caption")
    if not group.similars:
        raise ValueError(f"group of {group.target!r} has no similar images")
    sim_sets = [dataset.tokens(m) for m in group.similars]
    scores = [sum(per_image_similarity(cap, s, idf) for s in sim_sets) / len(sim_sets)
              for cap in target_gts]
    if rule == "median":
        cut = float(np.median(scores))
    elif rule == "threshold":
        if tau is None:
            raise ValueError("threshold rule needs tau")
        cut = tau
    else:
        raise ValueError(f"unknown indicator rule {rule!r}")
    labels = [DISTINCTIVE if s < cut else COMMON for s in scores]
    return CaptionIndicator(labels, scores)

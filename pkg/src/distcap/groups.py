"""Similar-image group construction by exhaustive cosine retrieval."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

IMAGE_IMAGE = "image-image"
CAPTION_RETRIEVAL = "caption-retrieval"
MODES = (IMAGE_IMAGE, CAPTION_RETRIEVAL)

# caption embedding ids are "<image id>#<anything>"
OWNER_SEP = "#"


class EmbeddingStore:
    """Id -> fixed-width float vector.

    Vectors are kept as stored (float32 when read from disk) and promoted to
    float64 for similarity computations. For ``kind="caption"`` every id
    names its owner image as the part before the last ``#``.
    """

    def __init__(self, ids: Sequence[str], vectors, kind: str = "image", dim: Optional[int] = None):
        vectors = np.asarray(vectors)
        if vectors.size == 0:
            vectors = vectors.reshape(0, dim or 0)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise ValueError(f"expected {len(ids)} vectors, got array of shape {vectors.shape}")
        if dim is not None and vectors.shape[1] != dim:
            raise ValueError(f"declared dim {dim} but vectors have width {vectors.shape[1]}")
        if not np.all(np.isfinite(vectors)):
            bad = ids[int(np.argwhere(~np.isfinite(vectors))[0, 0])]
            raise ValueError(f"non-finite component in vector {bad!r}")
        if kind not in ("image", "caption"):
            raise ValueError(f"unknown embedding kind {kind!r}")
        self.ids = list(ids)
        self.index = {}
        for n, i in enumerate(self.ids):
            if i in self.index:
                raise ValueError(f"duplicate embedding id {i!r}")
            self.index[i] = n
        self.vectors = vectors
        self.kind = kind
        if kind == "caption":
            for i in self.ids:
                if OWNER_SEP not in i:
                    raise ValueError(f"caption embedding id {i!r} lacks an '{OWNER_SEP}' owner prefix")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key) -> bool:
        return key in self.index

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.vectors[self.index[key]].astype(np.float64)
        except KeyError:
            raise KeyError(f"no embedding for {key!r}") from None

    def owner(self, key: str) -> str:
        return key.rsplit(OWNER_SEP, 1)[0]


@dataclass(frozen=True)
class ImageGroup:
    target: str
    similars: tuple
    leftover: bool = False

    def __post_init__(self):
        object.__setattr__(self, "similars", tuple(self.similars))
        if self.target in self.similars:
            raise ValueError(f"target {self.target!r} listed among its own similars")
        if len(set(self.similars)) != len(self.similars):
            raise ValueError(f"duplicate similar images in group of {self.target!r}")

    @property
    def members(self) -> tuple:
        return (self.target, *self.similars)

    @property
    def K(self) -> int:
        return len(self.similars)

    def to_dict(self) -> dict:
        return {"target": self.target, "similars": list(self.similars), "leftover": self.leftover}

    @classmethod
    def from_dict(cls, d) -> "ImageGroup":
        return cls(d["target"], tuple(d["similars"]), bool(d.get("leftover", False)))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def _rank(scores: dict, k: int) -> list:
    return [i for i, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]]


def nearest(store: EmbeddingStore, query_id: str, k: int, pool: Iterable[str]) -> list:
    """The ``k`` pool ids most cosine-similar to ``query_id``; ties by ascending id."""
    q = _unit(store.vector(query_id))
    candidates = sorted(set(pool) - {query_id})
    if k > len(candidates):
        raise ValueError(f"need {k} neighbours but pool has only {len(candidates)} candidates")
    return _rank({c: float(np.dot(_unit(store.vector(c)), q)) for c in candidates}, k)


def nearest_by_captions(images: EmbeddingStore, captions: EmbeddingStore, query_id: str,
                        k: int, pool: Iterable[str]) -> list:
    """Rank pool images by the best cosine between the query image vector and
    any of their caption vectors."""
    q = _unit(images.vector(query_id))
    pool = set(pool) - {query_id}
    best: dict = {}
    for cap_id in captions.ids:
        owner = captions.owner(cap_id)
        if owner in pool:
            s = float(np.dot(_unit(captions.vector(cap_id)), q))
            if owner not in best or s > best[owner]:
                best[owner] = s
    if k > len(best):
        raise ValueError(f"need {k} neighbours but only {len(best)} pool images have captions")
    return _rank(best, k)


def build_groups(store: EmbeddingStore, image_ids: Iterable[str], K: int = 5, seed: int = 0,
                 mode: str = IMAGE_IMAGE,
                 caption_store: Optional[EmbeddingStore] = None) -> list[ImageGroup]:
    """Greedy partition of ``image_ids`` into groups of K+1 similar images.

    Targets are drawn in seeded random order; each finished group leaves the
    pool. Once fewer than K+1 images remain, each leftover becomes a target
    whose similars come from the whole image set.
    """
    if mode not in MODES:
        raise ValueError(f"unknown grouping mode {mode!r}; expected one of {MODES}")
    if mode == CAPTION_RETRIEVAL and caption_store is None:
        raise ValueError("caption-retrieval mode needs a caption embedding store")
    all_ids = sorted(set(image_ids))
    if not all_ids:
        raise ValueError("no images to group")
    if K < 1 or K >= len(all_ids):
        raise ValueError(f"K={K} must be in [1, {len(all_ids) - 1}] for {len(all_ids)} images")
    missing = [i for i in all_ids if i not in store]
    if missing:
        raise KeyError(f"no image embedding for {missing[:5]}")

    def retrieve(target, pool):
        if mode == IMAGE_IMAGE:
            return nearest(store, target, K, pool)
        return nearest_by_captions(store, caption_store, target, K, pool)

    rng = np.random.default_rng(seed)
    pool = list(all_ids)
    groups = []
    while len(pool) >= K + 1:
        target = pool[int(rng.integers(len(pool)))]
        similars = retrieve(target, pool)
        groups.append(ImageGroup(target, tuple(similars)))
        taken = {target, *similars}
        pool = [i for i in pool if i not in taken]
    for target in pool:
        groups.append(ImageGroup(target, tuple(retrieve(target, all_ids)), leftover=True))
    return groups


def groups_to_json(groups, **meta) -> dict:
    return {**meta, "groups": [g.to_dict() for g in groups]}


def groups_from_json(doc) -> list[ImageGroup]:
    if not isinstance(doc, dict) or not isinstance(doc.get("groups"), list):
        raise ValueError("groups file must be an object with a 'groups' list")
    return [ImageGroup.from_dict(g) for g in doc["groups"]]

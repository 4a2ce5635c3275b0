"""CIDEr-D, BLEU and the group-based distinctiveness metrics.

``cider_btw``, ``cider_rank`` and ``dis_word_rate`` score a candidate
caption against the GT captions of its similar-image group; lower
CIDErBtw, lower CIDErRank and higher DisWordRate mean more distinctive.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .dataset import CaptionDataset
from .text import MAX_ORDER, all_ngrams, ngrams

DEFAULT_SIGMA = 6.0


@dataclass(frozen=True)
class IdfTable:
    """Document frequencies over a reference corpus.

    ``df`` counts the images whose reference set contains an n-gram at least
    once. Unseen n-grams query with df = 1.
    """

    df: Mapping[tuple, int]
    corpus_size: int
    n_max: int = MAX_ORDER
    scale: float = 1.0

    def idf(self, gram: tuple) -> float:
        return self.scale * math.log(self.corpus_size / self.df.get(gram, 1))

    def scaled(self, factor: float) -> "IdfTable":
        """Same table with every idf multiplied by ``factor`` (> 0)."""
        if factor <= 0:
            raise ValueError("idf scale factor must be positive")
        return IdfTable(self.df, self.corpus_size, self.n_max, self.scale * factor)


def idf_build(dataset: CaptionDataset, n_max: int = MAX_ORDER) -> IdfTable:
    if len(dataset) == 0:
        raise ValueError("cannot build idf over an empty dataset")
    df: Counter = Counter()
    for image_id in dataset:
        seen = set()
        for cap in dataset.tokens(image_id):
            seen.update(all_ngrams(cap, n_max))
        df.update(seen)
    return IdfTable(dict(df), len(dataset), n_max)


def _tfidf(seq, idf: IdfTable):
    vecs = []
    norms = []
    for n in range(1, idf.n_max + 1):
        vec = {g: tf * idf.idf(g) for g, tf in ngrams(seq, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider(candidate: Sequence[str], refs: Sequence[Sequence[str]], idf: IdfTable,
          sigma: float = DEFAULT_SIGMA, clipped: bool = True) -> float:
    """CIDEr-D of ``candidate`` against ``refs`` (``clipped=False`` gives plain CIDEr).

    Per-order tf-idf cosine, averaged over orders and references, times 10.
    CIDEr-D clips candidate weights at the reference weight and applies a
    Gaussian length penalty of width ``sigma``.
    """
    if not refs:
        raise ValueError("cider needs at least one reference")
    hyp, hyp_norm = _tfidf(candidate, idf)
    total = 0.0
    for ref in refs:
        rvec, ref_norm = _tfidf(ref, idf)
        penalty = 1.0
        if clipped:
            delta = float(len(candidate) - len(ref))
            penalty = math.exp(-(delta * delta) / (2.0 * sigma * sigma))
        per_order = 0.0
        for n in range(idf.n_max):
            if hyp_norm[n] == 0.0 or ref_norm[n] == 0.0:
                continue
            r = rvec[n]
            if clipped:
                dot = sum(min(h, r.get(g, 0.0)) * r.get(g, 0.0) for g, h in hyp[n].items())
            else:
                dot = sum(h * r.get(g, 0.0) for g, h in hyp[n].items())
            per_order += dot / (hyp_norm[n] * ref_norm[n]) * penalty
        total += per_order / idf.n_max
    return 10.0 * total / len(refs)


def per_image_similarity(candidate, gt_set, idf: IdfTable, **kwargs) -> float:
    """Mean of single-reference CIDEr values against one image's GT captions."""
    if not gt_set:
        raise ValueError("per_image_similarity needs a nonempty GT set")
    return sum(cider(candidate, [ref], idf, **kwargs) for ref in gt_set) / len(gt_set)


def group_similarities(candidate, group, dataset: CaptionDataset, idf: IdfTable,
                       **kwargs) -> list[float]:
    """[s_0, s_1, ..., s_K] for the target followed by each similar image."""
    members = [group.target, *group.similars]
    missing = [m for m in members if m not in dataset]
    if missing:
        raise KeyError(f"no GT captions for image(s) {missing}")
    return [per_image_similarity(candidate, dataset.tokens(m), idf, **kwargs) for m in members]


def cider_btw(candidate, group, dataset: CaptionDataset, idf: IdfTable, **kwargs) -> float:
    if not group.similars:
        raise ValueError(f"group of {group.target!r} has no similar images")
    scores = [per_image_similarity(candidate, dataset.tokens(m), idf, **kwargs)
              for m in group.similars]
    return sum(scores) / len(scores)


def rank_of_target(scores: Sequence[float]) -> int:
    """1 + number of similar-image scores strictly above the target's (scores[0])."""
    s0 = scores[0]
    return 1 + sum(1 for s in scores[1:] if s > s0)


def cider_rank(candidate, group, dataset: CaptionDataset, idf: IdfTable, **kwargs) -> int:
    """Rank of the target among its group by per-image CIDEr; ties favour the target."""
    return rank_of_target(group_similarities(candidate, group, dataset, idf, **kwargs))


def dis_word_rate(candidate, omega, target_gts) -> Optional[float]:
    """Best-over-references share of a reference's distinctive words that the
    candidate reproduces.

    References sharing no word with ``omega`` are skipped; returns None when
    every reference is skipped.
    """
    if not target_gts:
        raise ValueError("dis_word_rate needs at least one target GT caption")
    cand = set(candidate)
    omega = set(omega)
    best = None
    for gt in target_gts:
        covered = omega.intersection(gt)
        if not covered:
            continue
        rate = len(covered & cand) / len(covered)
        if best is None or rate > best:
            best = rate
    return best


def _closest_ref_len(cand_len: int, refs) -> int:
    return min((len(r) for r in refs), key=lambda rl: (abs(rl - cand_len), rl))


def bleu(candidates, refs, n: int = 4) -> float:
    """Corpus BLEU-n in [0, 1]: uniform-weight geometric mean of clipped
    precisions for orders 1..n times the brevity penalty. No smoothing."""
    if len(candidates) != len(refs):
        raise ValueError(f"{len(candidates)} candidates but {len(refs)} reference lists")
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"BLEU order must be in [1, {MAX_ORDER}], got {n}")
    matched = [0] * n
    possible = [0] * n
    cand_len = ref_len = 0
    for cand, rs in zip(candidates, refs):
        if not rs:
            raise ValueError("every candidate needs at least one reference")
        for k in range(1, n + 1):
            counts = ngrams(cand, k)
            max_ref: Counter = Counter()
            for r in rs:
                max_ref |= ngrams(r, k)
            matched[k - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            possible[k - 1] += max(0, len(cand) - k + 1)
        cand_len += len(cand)
        ref_len += _closest_ref_len(len(cand), rs)
    if cand_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / p) for m, p in zip(matched, possible)) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


@dataclass
class MetricReport:
    rows: list[dict]
    corpus: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "corpus": self.corpus}


class MissingCandidatesError(KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"no candidate caption for image(s): {', '.join(self.ids)}")


def _mean(values):
    return sum(values) / len(values) if values else None


def corpus_report(candidates: Mapping[str, Sequence[str]], dataset: CaptionDataset,
                  groups, omegas: Optional[Mapping] = None,
                  idf: Optional[IdfTable] = None, bleu_orders: int = 4) -> MetricReport:
    """Per-target metric rows plus corpus means, ordered by target id.

    ``omegas`` defaults to each group's distinctive word set. The idf table
    defaults to one built over ``dataset``.
    """
    from .distinct import distinct_words

    missing = {g.target for g in groups if g.target not in candidates}
    if missing:
        raise MissingCandidatesError(missing)
    idf = idf or idf_build(dataset)
    rows = []
    for group in sorted(groups, key=lambda g: g.target):
        cand = list(candidates[group.target])
        gts = dataset.tokens(group.target)
        if omegas is not None and group.target in omegas:
            omega = omegas[group.target]
        else:
            omega = distinct_words(gts, [c for m in group.similars for c in dataset.tokens(m)])
        scores = group_similarities(cand, group, dataset, idf)
        rows.append({
            "image_id": group.target,
            "cider": cider(cand, gts, idf),
            "cider_btw": sum(scores[1:]) / len(scores[1:]),
            "cider_rank": rank_of_target(scores),
            "dis_word_rate": dis_word_rate(cand, omega, gts),
            "bleu": {f"bleu{k}": bleu([cand], [gts], k) for k in range(1, bleu_orders + 1)},
        })
    dwr = [r["dis_word_rate"] for r in rows if r["dis_word_rate"] is not None]
    corpus = {
        "n_images": len(rows),
        "cider": _mean([r["cider"] for r in rows]),
        "cider_btw": _mean([r["cider_btw"] for r in rows]),
        "cider_rank": _mean([r["cider_rank"] for r in rows]),
        "dis_word_rate": _mean(dwr),
        "dis_word_rate_excluded": len(rows) - len(dwr),
        "bleu": {f"bleu{k}": _mean([r["bleu"][f"bleu{k}"] for r in rows])
                 for k in range(1, bleu_orders + 1)},
        "corpus_bleu": {
            f"bleu{k}": bleu([list(candidates[r["image_id"]]) for r in rows],
                             [dataset.tokens(r["image_id"]) for r in rows], k)
            for k in range(1, bleu_orders + 1)},
    }
    return MetricReport(rows, corpus)

"""Tokenization, n-gram counting and word sets."""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence

MAX_ORDER = 4

_STRIP = re.compile(r"[^a-z0-9']+")

TokenSeq = list  # list[str]; lowercase, non-empty, whitespace-free tokens
NGram = tuple  # tuple[str, ...]


def tokenize(raw: str) -> list[str]:
    """Lowercase, blank out everything but ``[a-z0-9']`` and split."""
    return _STRIP.sub(" ", raw.lower()).split()


def ngrams(seq: Sequence[str], n: int) -> Counter:
    """Counts of contiguous ``n``-grams in ``seq`` (``1 <= n <= 4``)."""
    if not 1 <= n <= MAX_ORDER:
        raise ValueError(f"n-gram order must be in [1, {MAX_ORDER}], got {n}")
    seq = tuple(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def all_ngrams(seq: Sequence[str], max_order: int = MAX_ORDER) -> Counter:
    """Counts of every n-gram of order 1..max_order, keyed by tuple."""
    counts: Counter = Counter()
    for n in range(1, max_order + 1):
        counts.update(ngrams(seq, n))
    return counts


def word_set(captions: Iterable[Sequence[str]]) -> frozenset:
    """Union of the unique tokens across ``captions``."""
    words: set[str] = set()
    for cap in captions:
        words.update(cap)
    return frozenset(words)


END_TOKEN = "<eos>"


class Vocab:
    """Token <-> id map; id 0 is the end token (also the decoding start)."""

    def __init__(self, words: Iterable[str]):
        self.words = [END_TOKEN]
        self.index = {END_TOKEN: 0}
        for w in words:
            if w not in self.index:
                self.index[w] = len(self.words)
                self.words.append(w)

    @classmethod
    def from_captions(cls, captions: Iterable[Sequence[str]]) -> "Vocab":
        return cls(sorted(word_set(captions)))

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word) -> bool:
        return word in self.index

    def encode(self, tokens: Sequence[str]) -> list[int]:
        try:
            return [self.index[t] for t in tokens]
        except KeyError as exc:
            raise KeyError(f"token {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.words[i] for i in ids if i != 0]

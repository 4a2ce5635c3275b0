import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from distcap.dataset import CaptionDataset
from distcap.distinct import (COMMON, DISTINCTIVE, TEMPLATE, DistinctProfile, distinct_words,
                              group_profile, indicate_captions, relatedness_weights)
from distcap.groups import EmbeddingStore, ImageGroup
from distcap.metrics import idf_build, per_image_similarity
from distcap.text import tokenize, word_set

T = tokenize


def test_distinct_words_examples():
    caps = [T("a red dog"), T("a frisbee")]
    assert distinct_words(caps, caps) == frozenset()
    assert distinct_words(caps, [T("the cat")]) == {"a", "red", "dog", "frisbee"}
    assert distinct_words([T("a red dog frisbee")], [T("a dog"), T("man")]) == {"red", "frisbee"}


words = st.sampled_from(["a", "red", "dog", "cat", "park", "frisbee", "man", "hat"])
caps = st.lists(st.lists(words, max_size=5), max_size=4)


@given(st.lists(st.lists(words, max_size=5), min_size=1, max_size=4), caps, st.lists(words, max_size=5))
def test_distinct_words_properties(target, similar, extra):
    omega = distinct_words(target, similar)
    assert omega <= word_set(target)
    assert not (omega & word_set(similar))
    assert distinct_words(target, similar + [extra]) <= omega


def sentence_store(scores: dict, dim=3):
    ids = [TEMPLATE.format(w) for w in scores]
    vecs = np.array([[s] + [0.0] * (dim - 1) for s in scores.values()])
    return EmbeddingStore(ids, vecs, kind="image")


def test_relatedness_examples():
    img = np.array([1.0, 0.0, 0.0])
    assert relatedness_weights({"red"}, sentence_store({"red": 0.3}), img) == {"red": 1.0}
    assert relatedness_weights({"red", "kite"}, sentence_store({"red": 2.0, "kite": 1.0}), img) == \
        {"red": 1.0, "kite": 0.5}
    assert relatedness_weights({"red", "kite"}, sentence_store({"red": -2.0, "kite": -1.0}), img) == \
        {"red": 1.0, "kite": 1.0}
    assert relatedness_weights({"red", "kite"}, sentence_store({"red": 2.0, "kite": -1.0}), img) == \
        {"red": 1.0, "kite": 0.0}


def test_relatedness_missing_word_named():
    with pytest.raises(KeyError, match="zebra"):
        relatedness_weights({"zebra"}, sentence_store({"red": 1.0}), np.ones(3))


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=5), st.floats(0.01, 100))
def test_relatedness_scale_invariant_and_bounded(raw, scale):
    names = ["w%d" % i for i in range(len(raw))]
    store = sentence_store(dict(zip(names, raw)))
    img = np.array([1.0, 0.0, 0.0])
    lam = relatedness_weights(set(names), store, img)
    assert max(lam.values()) == 1.0
    assert all(0.0 <= v <= 1.0 for v in lam.values())
    scaled = relatedness_weights(set(names), store, img * scale)
    for k in lam:
        assert scaled[k] == pytest.approx(lam[k], abs=1e-12)


def test_profile_defaults_and_validation():
    p = DistinctProfile("a", {"red"})
    assert p.weights == {"red": 1.0}
    assert DistinctProfile.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        DistinctProfile("a", {"red"}, {"kite": 1.0})


def test_group_profile():
    d = CaptionDataset({"t": ["a red dog"], "s": ["a dog"]})
    assert group_profile(ImageGroup("t", ("s",)), d).omega == {"red"}


def indicator_dataset():
    return CaptionDataset({
        "t": ["a dog on the grass", "a dog in a park", "a brown dog playing",
              "zebra stripes everywhere", "a dog with a ball"],
        "s1": ["a dog in the park", "a dog playing"],
        "s2": ["a brown dog on grass", "a dog with a ball"],
        "x": ["a cake"],
    })


def test_indicator_disjoint_caption_is_distinctive():
    d = indicator_dataset()
    idf = idf_build(d)
    g = ImageGroup("t", ("s1", "s2"))
    ind = indicate_captions(d.tokens("t"), g, d, idf)
    # brute-force per-caption CIDErBtw
    for cap, score in zip(d.tokens("t"), ind.scores):
        brute = (per_image_similarity(cap, d.tokens("s1"), idf) + per_image_similarity(cap, d.tokens("s2"), idf)) / 2
        assert score == pytest.approx(brute, abs=1e-15)
    assert ind.scores[3] == 0.0 and all(s > 0 for i, s in enumerate(ind.scores) if i != 3)
    assert ind.labels[3] == DISTINCTIVE
    assert len(ind.labels) == 5


def test_indicator_identical_all_common():
    d = CaptionDataset({"t": ["a dog"] * 4, "s": ["a dog runs"], "x": ["cake"]})
    ind = indicate_captions(d.tokens("t"), ImageGroup("t", ("s",)), d, idf_build(d))
    assert ind.labels == [COMMON] * 4


def test_indicator_threshold_rule():
    d = indicator_dataset()
    g = ImageGroup("t", ("s1", "s2"))
    ind = indicate_captions(d.tokens("t"), g, d, idf_build(d), rule="threshold", tau=math.inf)
    assert ind.labels == [DISTINCTIVE] * 5
    with pytest.raises(ValueError):
        indicate_captions(d.tokens("t"), g, d, idf_build(d), rule="threshold")
    with pytest.raises(ValueError):
        indicate_captions([], g, d, idf_build(d))

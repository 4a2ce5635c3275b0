"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (visible with ``-s``); the same
lines are repeated in the pytest terminal summary.
"""

import contextlib
import math
import time

import numpy as np

import oracles
from conftest import ACCEPTANCE_LINES
from distcap.dataset import CaptionDataset
from distcap.formats import (decode_embeddings, decode_region_features, encode_embeddings,
                             encode_region_features, read_embeddings, read_region_features,
                             write_embeddings, write_region_features)
from distcap.gdma import attend, build_memory_bank
from distcap.gradcheck import REL_TOL, check_instance, random_instance
from distcap.groups import EmbeddingStore, ImageGroup, build_groups
from distcap.losses import combine, rl_reward
from distcap.metrics import bleu, cider, cider_rank, dis_word_rate, group_similarities, idf_build, \
    per_image_similarity
from distcap.tensor import init_encoder
from distcap.train import ToyConfig, corpus_dis_word_rate, make_planted_task, region_attention, train_toy


@contextlib.contextmanager
def criterion(number, title, time_limit=None):
    start = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        detail = f"{elapsed:.2f}s"
        if time_limit is not None and elapsed >= time_limit:
            detail += f" (limit {time_limit}s)"
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, limit {time_limit}s")
        status = "PASS"
    except BaseException as exc:
        detail = detail or type(exc).__name__
        raise
    finally:
        line = f"criterion {number:>2} {status}: {title} [{detail}]"
        ACCEPTANCE_LINES.append(line)
        print(line)


WORDS = ["a", "red", "dog", "cat", "park", "frisbee", "man", "hat", "blue", "bus", "on", "the"]


def test_01_dis_word_rate_matches_naive_oracle():
    rng = np.random.default_rng(101)

    def caption():
        return list(rng.choice(WORDS, size=int(rng.integers(0, 8))))

    with criterion(1, "DisWordRate equals naive set oracle on 1000 instances", time_limit=5):
        for _ in range(1000):
            cand = caption()
            omega = set(rng.choice(WORDS, size=int(rng.integers(0, 6)), replace=False))
            gts = [caption() for _ in range(int(rng.integers(1, 5)))]
            assert dis_word_rate(cand, omega, gts) == oracles.dis_word_rate(cand, omega, gts)


def test_02_fixture_matches_reference_implementation(fixture_dataset, fixture_candidates, oracle):
    with criterion(2, "fixture CIDEr and BLEU match reference values within 1e-6", time_limit=1):
        idf = idf_build(fixture_dataset)
        ids = fixture_dataset.ids()
        for i in ids:
            got = cider(fixture_candidates.tokens(i)[0], fixture_dataset.tokens(i), idf)
            assert abs(got - oracle["cider_per_image"][i]) < 1e-6
        cands = [fixture_candidates.tokens(i)[0] for i in ids]
        refs = [fixture_dataset.tokens(i) for i in ids]
        for n in range(1, 5):
            assert abs(bleu(cands, refs, n) - oracle["corpus_bleu"][f"bleu{n}"]) < 1e-6
            for i, c, r in zip(ids, cands, refs):
                assert abs(bleu([c], [r], n) - oracle["sentence_bleu"][i][f"bleu{n}"]) < 1e-6


def test_03_cider_rank_brute_force(fixture_dataset):
    rng = np.random.default_rng(303)
    idf = idf_build(fixture_dataset)
    ids = fixture_dataset.ids()
    with criterion(3, "CIDErRank equals explicit sort on 200 groups; rank 1 on disjoint vocabularies"):
        for _ in range(200):
            members = list(rng.choice(ids, size=6, replace=False))
            group = ImageGroup(members[0], tuple(members[1:]))
            source = members[int(rng.integers(6))] if rng.random() < 0.8 else ids[int(rng.integers(len(ids)))]
            caps = fixture_dataset.tokens(source)
            cand = caps[int(rng.integers(len(caps)))]
            s = group_similarities(cand, group, fixture_dataset, idf)
            order = sorted(range(6), key=lambda k: (-s[k], k))  # ties: target (k=0) first
            assert cider_rank(cand, group, fixture_dataset, idf) == order.index(0) + 1
        for _ in range(50):
            target_words, other_words = WORDS[:6], WORDS[6:]
            images = {"t": [" ".join(rng.choice(target_words, size=4)) for _ in range(3)]}
            for k in range(5):
                images[f"s{k}"] = [" ".join(rng.choice(other_words, size=4)) for _ in range(3)]
            ds = CaptionDataset(images)
            group = ImageGroup("t", tuple(f"s{k}" for k in range(5)))
            cand = ds.tokens("t")[int(rng.integers(3))]
            assert cider_rank(cand, group, ds, idf_build(ds)) == 1


def test_04_gdma_invariants():
    rng = np.random.default_rng(404)
    tol = 1e-9

    def group(K):
        n0 = int(rng.integers(1, 9))
        return [rng.normal(size=(n0 if k == 0 else int(rng.integers(1, 9)), 8)) for k in range(K + 1)]

    with criterion(4, "GDMA invariants over 100 trials each"):
        for _ in range(100):
            diffs = group(int(rng.integers(1, 6)))
            s = attend(diffs, 0, rng.uniform(0, 3), rng.uniform(0, 1.5))
            assert (s.D > 0).all() and abs(s.D.sum() - 1) < tol
        for _ in range(100):
            K = int(rng.integers(2, 6))
            diffs = group(K)
            w, b = rng.uniform(0, 3), rng.uniform(0, 1.5)
            s = attend(diffs, 0, w, b)
            perm = [0, *(1 + rng.permutation(K))]
            t = attend([diffs[k] for k in perm], 0, w, b)
            for x, y in ((s.d, t.d), (s.D, t.D), (s.A, t.A)):
                assert np.max(np.abs(x - y)) < tol
        for _ in range(100):
            K = int(rng.integers(1, 6))
            diffs = group(K)
            s = attend(diffs)
            k = int(rng.integers(1, K + 1))
            shuffled = list(diffs)
            shuffled[k] = diffs[k][rng.permutation(diffs[k].shape[0])]
            assert np.max(np.abs(attend(shuffled).R_tilde[k - 1] - s.R_tilde[k - 1])) < tol
        for _ in range(100):
            diffs = group(int(rng.integers(1, 6)))
            scaled = [m * rng.uniform(1e-3, 1e3, size=(m.shape[0], 1)) for m in diffs]
            assert np.max(np.abs(attend(scaled).D - attend(diffs).D)) < tol
        for trial in range(100):
            d_in = int(rng.integers(2, 9))
            enc = init_encoder(d_in, d_m=8, heads=2, layers=int(rng.integers(1, 3)), seed=trial)
            bank = build_memory_bank([rng.normal(size=(int(rng.integers(1, 9)), d_in))], enc)
            m = bank.diffs[0][0]
            assert m.tobytes() == np.zeros_like(m).tobytes()


def test_05_gradients_match_finite_differences():
    with criterion(5, "analytic gradients match central differences on 100 instances", time_limit=30):
        worst = {}
        for seed in range(100):
            for name, err in check_instance(random_instance(seed)).items():
                worst[name] = max(worst.get(name, 0.0), err)
        assert max(worst.values()) < REL_TOL, worst


def test_06_quarter_rule():
    rng = np.random.default_rng(606)
    with criterion(6, "combine() applies the quarter rule exactly"):
        for _ in range(10000):
            xe, rl, dis, mem = rng.uniform(1e-6, 1e3, size=4) * rng.choice([1, 1e-4, 1e4], size=4)
            for stage, base in ((1, xe), (2, rl)):
                br = combine(xe, rl if stage == 1 else -rl, dis, mem, stage)
                _, _, a_d, a_m = br.alphas
                assert math.isclose(a_d * dis, 0.25 * base, rel_tol=4e-16)
                assert math.isclose(a_m * mem, 0.25 * base, rel_tol=4e-16)


def test_07_toy_training_learns_planted_words():
    with criterion(7, "toy training recovers planted words and attends planted regions", time_limit=60):
        config = ToyConfig()
        assert (config.n_groups, config.K + 1, config.vocab, config.steps) == (3, 6, 30, 500)
        task = make_planted_task(config.n_groups, config.K + 1, config.vocab, config.regions,
                                 config.feature_dim, config.seed, config.feature_scale)
        state, log = train_toy(task.groups, task.features, task.dataset, config, vocab=task.vocab)
        greedy = state.greedy_captions(config.max_len)
        assert len(greedy) == 18
        for image_id, word in task.planted_word.items():
            assert word in greedy[image_id], (image_id, greedy[image_id])
        assert corpus_dis_word_rate(state, config.max_len) == 1.0
        planted, common = [], []
        for _, a in region_attention(state):
            planted.append(a[task.planted_region])
            common.extend(np.delete(a, task.planted_region))
        assert np.mean(planted) > np.mean(common)
        _, again = train_toy(task.groups, task.features, task.dataset, config, vocab=task.vocab)
        assert again == log


def test_08_group_builder_recovers_clusters():
    rng = np.random.default_rng(808)
    with criterion(8, "group builder recovers 4 planted clusters of 6"):
        ids, vecs, truth = [], [], []
        for c in range(4):
            center = np.zeros(16)
            center[c] = 10.0
            members = []
            for j in range(6):
                ids.append(f"c{c}-{j}")
                vecs.append(center + rng.normal(0, 0.5, 16))
                members.append(ids[-1])
            truth.append(sorted(members))
        for seed in range(20):
            groups = build_groups(EmbeddingStore(ids, np.array(vecs)), ids, K=5, seed=seed)
            assert not any(g.leftover for g in groups)
            assert sorted(sorted(g.members) for g in groups) == sorted(truth)
            seen = [m for g in groups for m in g.members]
            assert sorted(seen) == sorted(ids)


def test_09_reward_equals_per_image_similarity(fixture_dataset):
    rng = np.random.default_rng(909)
    idf = idf_build(fixture_dataset)
    pool = [c for i in fixture_dataset for c in fixture_dataset.tokens(i)]
    words = sorted({w for c in pool for w in c}) + ["zebra", "unseen"]
    with criterion(9, "rl_reward equals per_image_similarity bit for bit on 1000 inputs"):
        for _ in range(1000):
            if rng.random() < 0.5:
                cand = pool[int(rng.integers(len(pool)))]
            else:
                cand = list(rng.choice(words, size=int(rng.integers(1, 10))))
            gts = [pool[int(k)] for k in rng.integers(len(pool), size=int(rng.integers(1, 6)))]
            a, b = rl_reward(cand, gts, idf), per_image_similarity(cand, gts, idf)
            assert a == b and np.float64(a).tobytes() == np.float64(b).tobytes()


def test_10_binary_roundtrips(tmp_path):
    rng = np.random.default_rng(1010)
    with criterion(10, "DDEM and DDRF round-trip bitwise on 100 random files each"):
        for n in range(100):
            count = 0 if n % 10 == 0 else int(rng.integers(1, 30))
            dim = int(rng.integers(1, 17))
            ids = [f"im{n}_{k}" + "é" * int(rng.integers(0, 3)) for k in range(count)]
            vecs = (rng.normal(size=(count, dim)) * 10.0 ** rng.integers(-30, 30, size=(count, 1))).astype("<f4")
            path = tmp_path / f"e{n}.ddem"
            path.write_bytes(encode_embeddings(ids, vecs, dim))
            store = read_embeddings(path)
            assert store.ids == ids and store.dim == dim
            assert np.asarray(store.vectors, "<f4").tobytes() == vecs.tobytes()
            write_embeddings(store, tmp_path / "again.ddem")
            assert (tmp_path / "again.ddem").read_bytes() == path.read_bytes()

            feats = {f"r{n}_{k}": rng.normal(size=(int(rng.integers(1, 6)), dim)).astype("<f4")
                     for k in range(count)}
            fpath = tmp_path / f"f{n}.ddrf"
            write_region_features(feats, fpath, d=dim)
            back = read_region_features(fpath)
            assert list(back) == list(feats)
            assert all(back[k].tobytes() == feats[k].tobytes() for k in feats)
            assert encode_region_features(back, dim) == fpath.read_bytes()
            if count == 0:
                assert len(fpath.read_bytes()) == 16
                assert len(decode_embeddings(path.read_bytes())) == 0
                assert decode_region_features(fpath.read_bytes()) == {}

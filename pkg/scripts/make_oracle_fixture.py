"""Regenerate tests/fixtures/oracle_values.json from independent implementations.

CIDEr-D and document frequencies come from pycocoevalcap's CiderScorer, BLEU
from nltk.translate.bleu_score.corpus_bleu (no smoothing). Nothing from
distcap is imported; the tokenization rule is restated here.

    pip install pycocoevalcap nltk   # pycocoevalcap with --no-deps
    python scripts/make_oracle_fixture.py
"""

import json
import re
import warnings
from pathlib import Path

from nltk.translate.bleu_score import corpus_bleu
from pycocoevalcap.cider.cider_scorer import CiderScorer

FIX = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
PROBE = "a man riding a horse"


def tok(s):
    return re.sub(r"[^a-z0-9']+", " ", s.lower()).split()


def cider_scores(cands, refs):
    scorer = CiderScorer(n=4, sigma=6.0)
    for c, rs in zip(cands, refs):
        scorer += (" ".join(c), [" ".join(r) for r in rs])
    _, scores = scorer.compute_score()
    return [float(s) for s in scores], scorer.document_frequency


def single_ref_mean(cand, rs, df, corpus_size):
    scorer = CiderScorer(n=4, sigma=6.0)
    for r in rs:
        scorer += (" ".join(cand), [" ".join(r)])
    # pad so the scorer's log(len(crefs)) equals log(corpus_size); df is injected
    while len(scorer.crefs) < corpus_size:
        scorer += (" ".join(cand), [" ".join(rs[0])])
    scorer.document_frequency = df
    scores = scorer.compute_cider()[:len(rs)]
    return float(sum(scores) / len(rs))


def bleu_weights(n):
    return tuple([1.0 / n] * n)


def main():
    data = json.loads((FIX / "captions10.json").read_text())["images"]
    cands = {r["id"]: tok(r["captions"][0]) for r in json.loads((FIX / "candidates10.json").read_text())["images"]}
    ids = [r["id"] for r in data]
    refs = [[tok(c) for c in r["captions"]] for r in data]
    cand_list = [cands[i] for i in ids]

    per_image, df = cider_scores(cand_list, refs)
    probe, _ = cider_scores([tok(PROBE)] * len(ids), refs)
    # per-image similarity of the probe: mean of single-reference CIDEr-D
    # with corpus document frequencies
    probe_sim = {i: single_ref_mean(tok(PROBE), rs, df, len(ids)) for i, rs in zip(ids, refs)}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        corpus = {f"bleu{n}": float(corpus_bleu(refs, cand_list, weights=bleu_weights(n))) for n in range(1, 5)}
        sentence = {i: {f"bleu{n}": float(corpus_bleu([rs], [c], weights=bleu_weights(n))) for n in range(1, 5)}
                    for i, c, rs in zip(ids, cand_list, refs)}

    out = {
        "provenance": ("CIDEr-D: pycocoevalcap 1.2 cider_scorer.CiderScorer(n=4, sigma=6.0), document "
                       "frequencies over all 10 fixture images. BLEU: nltk corpus_bleu, uniform weights, "
                       "no smoothing. Generated by scripts/make_oracle_fixture.py."),
        "cider_per_image": dict(zip(ids, per_image)),
        "cider_probe": {"candidate": PROBE, "scores": dict(zip(ids, probe)),
                        "per_image_similarity": probe_sim},
        # the scorer's defaultdict also holds zero entries for looked-up candidate n-grams
        "document_frequency": sorted([" ".join(g), int(v)] for g, v in df.items() if v > 0),
        "corpus_bleu": corpus,
        "sentence_bleu": sentence,
    }
    (FIX / "oracle_values.json").write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()

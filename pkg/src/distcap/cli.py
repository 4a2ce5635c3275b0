"""Command-line interface.

Exit status: 0 success, 1 validation error (bad arguments or file
contents), 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import formats
from .dataset import read_captions, write_captions
from .distinct import DistinctProfile, group_profile
from .gdma import build_memory_bank, target_view
from .groups import IMAGE_IMAGE, MODES, build_groups, groups_from_json, groups_to_json
from .metrics import corpus_report
from .tensor import EncoderParams

log = logging.getLogger("distcap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: line {exc.lineno}: {exc.msg}") from None


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def cmd_groups_build(args) -> None:
    dataset = read_captions(args.captions)
    store = formats.read_embeddings(args.embeddings)
    caps = formats.read_embeddings(args.caption_embeddings, kind="caption") if args.caption_embeddings else None
    groups = build_groups(store, dataset.ids(), K=args.K, seed=args.seed, mode=args.mode, caption_store=caps)
    _write_json(groups_to_json(groups, K=args.K, seed=args.seed, mode=args.mode), args.output)


def cmd_diswords(args) -> None:
    dataset = read_captions(args.captions)
    groups = groups_from_json(_read_json(args.groups))
    if (args.sent_emb is None) != (args.img_emb is None):
        raise ValueError("--sent-emb and --img-emb must be given together")
    sent = formats.read_embeddings(args.sent_emb) if args.sent_emb else None
    img = formats.read_embeddings(args.img_emb) if args.img_emb else None
    profiles = [group_profile(g, dataset, sent, img).to_dict() for g in groups]
    _write_json({"profiles": profiles}, args.output)


def read_profiles(path) -> dict:
    doc = _read_json(path)
    return {p["target"]: DistinctProfile.from_dict(p) for p in doc["profiles"]}


def cmd_eval(args) -> None:
    dataset = read_captions(args.captions)
    cands = read_captions(args.candidates)
    for i in cands:
        if len(cands.images[i]) != 1:
            raise ValueError(f"candidate file must hold exactly one caption per image ({i!r})")
    groups = groups_from_json(_read_json(args.groups))
    omegas = None
    if args.diswords:
        omegas = {t: p.omega for t, p in read_profiles(args.diswords).items()}
    report = corpus_report({i: cands.tokens(i)[0] for i in cands}, dataset, groups, omegas)
    _write_json(_jsonable(report.to_dict()), args.output)


def load_checkpoint(path):
    arrays = formats.read_arrays(path)
    enc = {k[len("encoder."):]: v for k, v in arrays.items() if k.startswith("encoder.")}
    if "heads" not in enc:
        raise ValueError(f"{path}: no encoder parameters")
    heads = int(enc.pop("heads"))
    train = {k[len("train."):]: v for k, v in arrays.items() if k.startswith("train.")}
    return EncoderParams.from_named_arrays(enc, heads), train


def save_checkpoint(path, encoder: EncoderParams, trainables: dict) -> None:
    arrays = {f"encoder.{k}": v for k, v in encoder.named_arrays().items()}
    arrays["encoder.heads"] = np.array(float(encoder.heads))
    arrays.update({f"train.{k}": v for k, v in trainables.items()})
    formats.write_arrays(arrays, path)


def cmd_gdma_run(args) -> None:
    features = formats.read_region_features(args.features)
    groups = groups_from_json(_read_json(args.groups))
    encoder, train = load_checkpoint(args.params)
    omega = float(train.get("omega", 1.0))
    bias = float(train.get("bias", 0.5))
    out = []
    for g in groups:
        missing = [m for m in g.members if m not in features]
        if missing:
            raise KeyError(f"no region features for {missing}")
        bank = build_memory_bank([features[m] for m in g.members], encoder, per_layer=args.per_layer)
        view = target_view(bank, 0, omega, bias)
        out.append({"target": g.target, "similars": list(g.similars),
                    "layers": [s.to_dict() for s in view.states]})
    _write_json({"groups": out}, args.output)


def cmd_train_toy(args) -> None:
    from .train import ToyConfig, corpus_dis_word_rate, make_planted_task, train_toy

    config = ToyConfig.from_dict(_read_json(args.config))
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    vocab = None
    if config.captions:
        dataset = read_captions(config.captions)
        features = formats.read_region_features(config.features)
        groups = groups_from_json(_read_json(config.groups))
    else:
        task = make_planted_task(config.n_groups, config.K + 1, config.vocab, config.regions,
                                 config.feature_dim, config.seed, config.feature_scale)
        dataset, features, groups, vocab = task.dataset, task.features, task.groups, task.vocab
        write_captions(dataset, outdir / "captions.json")
        formats.write_region_features(features, outdir / "features.ddrf")
        _write_json(groups_to_json(groups, K=config.K), outdir / "groups.json")
    state, entries = train_toy(groups, features, dataset, config, vocab=vocab)
    with open(outdir / "log.jsonl", "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(_jsonable({k: e[k] for k in ("step", "L_xe", "L_d", "L_m", "omega", "b")}),
                                sort_keys=True) + "\n")
    save_checkpoint(outdir / "checkpoint.ddmt", state.encoder, state.params)
    _write_json({"vocab": state.vocab.words}, outdir / "vocab.json")
    _write_json(_jsonable({"steps": state.step, "greedy": state.greedy_captions(config.max_len),
                           "dis_word_rate": corpus_dis_word_rate(state, config.max_len),
                           "omega": state.params["omega"], "b": state.params["bias"]}),
                outdir / "summary.json")


def cmd_gradcheck(args) -> int:
    from .gradcheck import REL_TOL, run

    worst = run(range(args.seed, args.seed + args.trials))
    print(f"{'parameter':<10} {'max rel err':>12}  result")
    ok = True
    for name, err in worst.items():
        passed = err < REL_TOL
        ok &= passed
        print(f"{name:<10} {err:>12.3e}  {'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="distcap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    g = sub.add_parser("groups", help="similar image groups")
    gsub = g.add_subparsers(dest="action", parser_class=_Parser, required=True)
    gb = gsub.add_parser("build", help="build similar image groups from embeddings")
    gb.add_argument("--embeddings", required=True, help="image embeddings (DDEM)")
    gb.add_argument("--captions", required=True, help="caption dataset JSON")
    gb.add_argument("--caption-embeddings", help="caption embeddings (DDEM, ids '<image>#<n>')")
    gb.add_argument("-K", type=int, default=5, help="similar images per group")
    gb.add_argument("--seed", type=int, default=0)
    gb.add_argument("--mode", choices=MODES, default=IMAGE_IMAGE)
    gb.add_argument("-o", "--output", required=True)
    gb.set_defaults(func=cmd_groups_build)

    d = sub.add_parser("diswords", help="distinctive word sets and relatedness weights")
    d.add_argument("--captions", required=True)
    d.add_argument("--groups", required=True)
    d.add_argument("--sent-emb", help="template sentence embeddings (DDEM)")
    d.add_argument("--img-emb", help="image embeddings (DDEM)")
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_diswords)

    e = sub.add_parser("eval", help="accuracy and distinctiveness metrics")
    e.add_argument("--candidates", required=True, help="one caption per image, dataset JSON shape")
    e.add_argument("--captions", required=True)
    e.add_argument("--groups", required=True)
    e.add_argument("--diswords", help="profiles JSON from 'diswords'")
    e.add_argument("-o", "--output", required=True)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("gdma", help="differential memory attention")
    msub = m.add_subparsers(dest="action", parser_class=_Parser, required=True)
    mr = msub.add_parser("run", help="dump R, R~, d, D, A for each group target")
    mr.add_argument("--features", required=True, help="region features (DDRF)")
    mr.add_argument("--groups", required=True)
    mr.add_argument("--params", required=True, help="checkpoint (DDMT)")
    mr.add_argument("--per-layer", action="store_true", help="apply GDMA after every encoder layer")
    mr.add_argument("-o", "--output", required=True)
    mr.set_defaults(func=cmd_gdma_run)

    t = sub.add_parser("train-toy", help="desk-scale training run")
    t.add_argument("--config", required=True)
    t.add_argument("-o", "--output", required=True, help="log directory")
    t.set_defaults(func=cmd_train_toy)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--trials", type=int, default=10)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"distcap: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"distcap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

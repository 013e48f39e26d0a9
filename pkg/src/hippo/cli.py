"""Command-line interface.

Subcommands: synth (generate a corpus), gopfeat (dump pronunciation
feature matrices), align (transfer scores onto transcriptions and measure
WER), train, eval, gradcheck. Every subcommand accepts --config with a
JSON or key=value file plus --seed/--out overrides; explicit flags win
over the config file. Success exits 0; any failure prints one JSON error
line to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .alignment import align as align_ops
from .alignment import assign_scores, word_error_rate
from .corpus import (
    CorpusConfig,
    UtteranceRecord,
    WORD_KEYS,
    generate_corpus,
    load_corpus,
    write_corpus,
)
from .ctc import LogPosteriorGrid, gop_features
from .data import prepare_corpus
from .losses import LossWeights
from .model import load_checkpoint
from .training import TrainConfig, evaluate, gradcheck, train


def _read_config(path: str) -> dict:
    with open(path) as f:
        text = f.read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, val = line.split("=", 1)
        elif ":" in line:
            key, val = line.split(":", 1)
        else:
            raise ValueError(f"config line not key=value: {raw!r}")
        key = key.strip()
        val = val.strip()
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _merged(args: argparse.Namespace, keys: list[str]) -> dict:
    cfg = _read_config(args.config) if args.config else {}
    merged = dict(cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _tuple2(v):
    t = tuple(int(x) for x in v)
    if len(t) != 2:
        raise ValueError("range needs two values")
    return t


def cmd_synth(args) -> int:
    merged = _merged(args, ["seed"])
    cfg = CorpusConfig(
        inventory_size=int(merged.get("inventory_size", 8)),
        lexicon_size=int(merged.get("lexicon_size", 40)),
        n_utterances=int(merged.get("n_utterances", 500)),
        words_range=_tuple2(merged.get("words_range", (3, 7))),
        phones_per_word=_tuple2(merged.get("phones_per_word", (2, 4))),
        frames_per_phone=_tuple2(merged.get("frames_per_phone", (2, 4))),
        target_wers=tuple(float(w) for w in np.atleast_1d(
            merged.get("target_wers", [0.2]))),
        seed=int(merged.get("seed", 0)),
    )
    out = args.out or "corpus.jsonl"
    paths = []
    for wer in cfg.target_wers:
        path = out if len(cfg.target_wers) == 1 else \
            out.replace(".jsonl", f"_wer{int(round(100 * wer)):02d}.jsonl")
        write_corpus(generate_corpus(cfg, wer), path)
        paths.append(path)
    print(json.dumps({"written": paths, "n_utterances": cfg.n_utterances}))
    return 0


def cmd_gopfeat(args) -> int:
    records = load_corpus(args.corpus)
    out = args.out or "gop.jsonl"
    with open(out, "w") as f:
        for r in records:
            grid = LogPosteriorGrid.from_probs(r.posteriors)
            phones = r.ref_phones if args.view == "ref" else r.hyp_phones
            feats = gop_features(grid, phones)
            f.write(json.dumps({"utt_id": r.utt_id, "gop": feats.tolist()}) + "\n")
    print(json.dumps({"written": out, "n_utterances": len(records)}))
    return 0


def _transferred(r: UtteranceRecord) -> dict:
    word_ops = align_ops(r.hyp_words, r.ref_words)
    phone_ops = align_ops(r.hyp_phones, r.ref_phones)
    return {
        "phone": list(assign_scores(phone_ops, r.scores["phone"], r.hyp_phones).scores),
        "word": {k: list(assign_scores(word_ops, r.scores["word"][k], r.hyp_words).scores)
                 for k in WORD_KEYS},
        "utt": dict(r.scores["utt"]),
    }


def cmd_align(args) -> int:
    records = load_corpus(args.corpus)
    out = args.out or "aligned.jsonl"
    total_err = 0.0
    total_ref = 0
    with open(out, "w") as f:
        for r in records:
            wer = word_error_rate(r.hyp_words, r.ref_words)
            total_err += wer * len(r.ref_words)
            total_ref += len(r.ref_words)
            doc = {
                "utt_id": r.utt_id,
                "hyp_words": [f"w{w:03d}" for w in r.hyp_words],
                "hyp_phones": [f"p{p}" for p in r.hyp_phones],
                "hyp_phone_to_word": r.hyp_phone_to_word,
                "hyp_scores": _transferred(r),
                "wer": wer,
            }
            f.write(json.dumps(doc) + "\n")
    print(json.dumps({"written": out, "corpus_wer": total_err / total_ref}))
    return 0


def _train_config(merged: dict) -> TrainConfig:
    weights = LossWeights(
        granularity={"phone": float(merged.get("lambda_phone", 1.0)),
                     "word": float(merged.get("lambda_word", 1.0)),
                     "utt": float(merged.get("lambda_utt", 1.0))},
        lambda_d=float(merged.get("lambda_d", 1.0)),
        lambda_t=float(merged.get("lambda_t", 1.0)),
        lambda_cono=float(merged.get("lambda_cono", 0.1)),
    )
    return TrainConfig(
        lr=float(merged.get("lr", 0.001)),
        batch_size=int(merged.get("batch_size", 25)),
        epochs=int(merged.get("epochs", 100)),
        hidden=int(merged.get("hidden", 24)),
        weights=weights,
        curriculum=str(merged.get("curriculum", "on")) == "on",
        cono=str(merged.get("cono", "on")) == "on",
        dev_fraction=float(merged.get("dev_fraction", 0.2)),
        eval_view=str(merged.get("eval_view", "hard")),
        out_dir=merged.get("out_dir"),
    )


def cmd_train(args) -> int:
    merged = _merged(args, ["seed", "epochs", "batch_size", "lr", "hidden",
                            "curriculum", "cono", "eval_view"])
    if args.out:
        merged["out_dir"] = args.out
    config = _train_config(merged)
    seed = int(merged.get("seed", 0))
    prepared = prepare_corpus(load_corpus(args.corpus))
    result = train(prepared, config, seed, log=lambda msg: print(msg, file=sys.stderr))
    summary = {
        "best_epoch": result.best_epoch,
        "dev": result.best_dev["aspects"],
        "out_dir": config.out_dir,
    }
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    records = load_corpus(args.corpus)
    prepared = prepare_corpus(records)
    reports = []
    for path in args.checkpoint:
        params = load_checkpoint(path)
        reports.append(evaluate(params, prepared, args.view,
                                dump_embeddings=args.dump_embeddings))
    if len(reports) == 1:
        doc = reports[0]
    else:
        from .training import aggregate_reports
        doc = json.loads(aggregate_reports(reports, list(range(len(reports)))).to_json())
    if args.out:
        with open(args.out, "w") as f:
            json.dump(doc, f, indent=2)
    print(json.dumps(doc))
    return 0


def cmd_gradcheck(args) -> int:
    merged = _merged(args, ["seed", "hidden"])
    report = gradcheck(hidden=int(merged.get("hidden", 8)),
                       seed=int(merged.get("seed", 0)))
    for line in report.lines():
        print(line)
    if report.passed:
        print(f"PASS all {len(report.groups)} parameter groups within "
              f"{report.tolerance:g}")
        return 0
    worst = report.worst
    print(json.dumps({"error": "gradient check failed",
                      "group": worst.name,
                      "max_rel_err": worst.max_rel_err}), file=sys.stderr)
    return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hippo",
                                     description="hierarchical pronunciation "
                                                 "assessment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON or key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("synth", help="generate a synthetic corpus (JSONL)")
    common(p)

    p = sub.add_parser("gopfeat", help="write per-utterance feature matrices")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--view", choices=["ref", "hyp"], default="ref")

    p = sub.add_parser("align", help="transfer scores onto transcriptions; report WER")
    common(p)
    p.add_argument("--corpus", required=True)

    p = sub.add_parser("train", help="train on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--curriculum", choices=["on", "off"], default=None)
    p.add_argument("--cono", choices=["on", "off"], default=None)
    p.add_argument("--eval-view", dest="eval_view", choices=["easy", "hard"], default=None)

    p = sub.add_parser("eval", help="evaluate checkpoints on a corpus view")
    common(p)
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--view", choices=["easy", "hard"], default="hard")
    p.add_argument("--dump-embeddings", dest="dump_embeddings", default=None)

    p = sub.add_parser("gradcheck", help="verify gradients of the full objective")
    common(p)
    p.add_argument("--hidden", type=int, default=None)

    return parser


COMMANDS = {
    "synth": cmd_synth,
    "gopfeat": cmd_gopfeat,
    "align": cmd_align,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as err:  # one machine-parsable line, nonzero exit
        print(json.dumps({"error": str(err), "type": type(err).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``incubator`` command line."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import recognizer as R
from .. import synthesizer as S
from ..ink import InkError, read_jsonl, write_jsonl
from ..metrics import CerMatrix, diagnose
from ..numerics.checkpoint import CheckpointError
from ..seeding import derive_seed
from ..toyworld import ToyConfigError, build_dataset
from . import pipeline
from .config import ConfigError, load_config
from .data import synthesis_texts
from .report import ReportError, write_report

log = logging.getLogger("inkubator")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _style(text: str) -> str:
    if text != "prior" and not text.startswith("ref:"):
        raise argparse.ArgumentTypeError("style must be 'prior' or 'ref:<jsonl>'")
    return text


def _decode(text: str) -> str:
    if text == "greedy":
        return text
    if text.startswith("beam:"):
        try:
            if int(text[5:]) >= 1:
                return text
        except ValueError:
            pass
    raise argparse.ArgumentTypeError("decode must be 'greedy' or 'beam:<width>'")


def _write_sidecar(ckpt: Path, info: dict) -> Path:
    side = ckpt.with_name(ckpt.name + ".manifest.json")
    info = dict(info, checkpoint=ckpt.name, checkpoint_sha256=pipeline.sha256_file(ckpt))
    pipeline.write_json(side, info)
    return side


def cmd_toygen(args) -> int:
    cfg = load_config(args.config)
    ds = build_dataset(cfg.toyworld)
    paths = ds.write(args.out, cfg.toyworld)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
    return 0


def cmd_train_synth(args) -> int:
    cfg = load_config(args.config)
    alphabet = cfg.toyworld.alphabet
    train = read_jsonl(args.data, alphabet)
    val = read_jsonl(args.val, alphabet) if args.val else None
    res = S.train_synth(train, alphabet, cfg.synth, val=val)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    S.save(out, res.params, cfg.synth, alphabet)
    _write_sidecar(out, {"kind": "synthesizer", "config": cfg.to_dict()["synth"], "history": res.history,
                         "data": str(args.data), "data_sha256": pipeline.sha256_file(args.data)})
    print(json.dumps(res.history[-1], sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    params, scfg, alphabet = S.load(args.ckpt)
    corpus = [line.strip() for line in Path(args.corpus).read_text(encoding="utf-8").splitlines() if line.strip()]
    for t in corpus:
        alphabet.encode(t)
    texts = synthesis_texts(corpus, args.count, derive_seed(args.seed, 0))
    seeds = [derive_seed(args.seed, 1, i) for i in range(args.count)]
    ids = [f"syn-{i:06d}" for i in range(args.count)]
    styles = None
    if args.style.startswith("ref:"):
        refs = read_jsonl(args.style[4:], alphabet)
        if not refs:
            raise S.SynthError("style reference file is empty")
        vecs = [S.encode_style(params, r, alphabet) for r in refs]
        styles = [S.StyleSource.reference(vecs[i % len(vecs)]) for i in range(args.count)]
    samples, hits = pipeline.synthesize(params, texts, alphabet, args.bias, seeds, ids, "train", scfg.eps_z, styles)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(args.out, samples)
    print(json.dumps({"count": len(samples), "hit_t_max": hits, "out": str(args.out)}))
    return 0


def cmd_train_rec(args) -> int:
    cfg = load_config(args.config)
    alphabet = cfg.toyworld.alphabet
    train = read_jsonl(args.data, alphabet)
    val = read_jsonl(args.val, alphabet) if args.val else None
    res = R.train_rec(train, alphabet, cfg.recognizer, val=val)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    R.save(out, res.params, cfg.recognizer, alphabet, {"best_epoch": res.best_epoch})
    _write_sidecar(out, {"kind": "recognizer", "config": cfg.to_dict()["recognizer"], "history": res.history,
                         "skipped": res.skipped, "data": str(args.data),
                         "data_sha256": pipeline.sha256_file(args.data)})
    print(json.dumps(res.history[-1], sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    params, rcfg, alphabet = R.load(args.ckpt)
    samples = read_jsonl(args.data, alphabet)
    preds, cer = R.evaluate(params, samples, alphabet, rcfg, args.decode)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as f:
        for p in preds:
            f.write(json.dumps(p, ensure_ascii=False, sort_keys=True) + "\n")
    print(json.dumps({"cer": cer, "n": len(preds), "decode": args.decode}))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    report = pipeline.run_sweep(cfg, out_parent=args.out)
    print(json.dumps({"run_dir": report["run_dir"], "b_star": report["b_star"]}))
    return 0


def cmd_diagnose(args) -> int:
    matrix = CerMatrix.loads(Path(args.matrix).read_text(encoding="utf-8"))
    print(diagnose(matrix, args.tau).dumps(), end="")
    return 0


def cmd_report(args) -> int:
    paths = write_report(args.run)
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="incubator", description="Handwriting data incubation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("toygen", help="generate the toy-world dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_toygen)

    s = sub.add_parser("train-synth", help="train the handwriting synthesizer")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--val", help="optional validation JSONL for per-epoch recon NLL")
    s.set_defaults(func=cmd_train_synth)

    s = sub.add_parser("synth", help="synthesize handwriting for corpus texts")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--corpus", required=True)
    s.add_argument("--bias", type=_nonneg_float, required=True)
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--style", type=_style, default="prior")
    s.add_argument("--seed", type=_u64, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-rec", help="train a CTC recognizer")
    s.add_argument("--data", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--val", help="optional validation JSONL for model selection")
    s.set_defaults(func=cmd_train_rec)

    s = sub.add_parser("eval", help="decode a dataset and report CER")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--decode", type=_decode, default="greedy")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run the full bias sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("diagnose", help="classify a CER matrix")
    s.add_argument("--matrix", required=True)
    s.add_argument("--tau", type=float, default=0.1)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("report", help="render the report bundle of a finished run")
    s.add_argument("--run", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ToyConfigError, InkError, CheckpointError, S.SynthError, R.RecognizerError,
            pipeline.SweepError, ReportError, ValueError, FileNotFoundError) as e:
        print(f"incubator {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

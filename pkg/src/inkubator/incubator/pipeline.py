"""The incubation sweep: toy data, synthesizer, biased synthesis, r/s/b recognizers.

Run layout (all paths in the manifest are relative to the run directory)::

    <out>/<timestamp>-<tag>/
        config.json  manifest.json  timings.json
        data/toy/...                      collected and real-test splits
        data/seed<k>/bias<b>/...          synthetic train/test sets
        ckpt/synth.ckpt  ckpt/seed<k>/... recognizer checkpoints
        metrics/...                       CER matrices, diagnoses, sweep report
        report/...                        CSV, plot, summary, gallery
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import __version__
from .. import recognizer as R
from .. import synthesizer as S
from ..ink import Alphabet, StrokeSample, read_jsonl, write_jsonl
from ..metrics import EVAL_SETS, TRAIN_SETS, CerMatrix, build_cer_matrix, diagnose
from ..seeding import derive_seed, tag
from ..toyworld import build_dataset
from . import data as D
from .config import ExperimentConfig, from_dict

log = logging.getLogger(__name__)

GEN_CHUNK = 256


class SweepError(RuntimeError):
    pass


def bias_dir(b: float) -> str:
    return f"bias{b:g}"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def new_run_dir(parent, run_tag: str) -> Path:
    parent = Path(parent)
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    root = parent / f"{stamp}-{run_tag}"
    k = 1
    while root.exists():
        root = parent / f"{stamp}-{run_tag}-{k}"
        k += 1
    root.mkdir(parents=True)
    return root


# ----------------------------------------------------------------------------
# synthesis helper


def synthesize(params: dict, texts: Sequence[str], alphabet: Alphabet, bias: float, seeds: Sequence[int],
               ids: Sequence[str], split: str, eps_z: float = 0.1,
               styles: Sequence[S.StyleSource] | None = None) -> tuple[list[StrokeSample], int]:
    """Generate one sample per text in fixed length-sorted chunks; returns (samples, n_hit_t_max)."""
    n = len(texts)
    styles = list(styles) if styles is not None else [S.StyleSource.prior()] * n
    order = sorted(range(n), key=lambda i: (len(texts[i]), i))
    out: list[StrokeSample | None] = [None] * n
    hits = 0
    for lo in range(0, n, GEN_CHUNK):
        idx = order[lo:lo + GEN_CHUNK]
        gens = S.generate_batch(params, [texts[i] for i in idx], alphabet, [styles[i] for i in idx], bias,
                                [seeds[i] for i in idx], ids=[ids[i] for i in idx], eps_z=eps_z)
        for i, g in zip(idx, gens):
            g.sample.split = split
            g.sample.writer_id = "synth"
            out[i] = g.sample
            hits += g.hit_t_max
    if n and hits == n:
        raise SweepError(f"all {n} generations at bias {bias:g} hit T_max; the synthesizer cannot finish its content")
    return out, hits


# ----------------------------------------------------------------------------
# task context shared by the stages


@dataclass
class Context:
    root: Path
    cfg: ExperimentConfig
    alphabet: Alphabet
    train: list
    val: list
    test: list
    real_test: list
    corpus: list
    excluded: list

    @classmethod
    def load(cls, root, cfg_dict: dict) -> "Context":
        root = Path(root)
        cfg = from_dict(cfg_dict)
        toy = root / "data" / "toy"
        alphabet = cfg.toyworld.alphabet
        gaps = read_json(toy / "gaps.json")
        return cls(
            root=root, cfg=cfg, alphabet=alphabet,
            train=read_jsonl(toy / "train.jsonl", alphabet),
            val=read_jsonl(toy / "val.jsonl", alphabet),
            test=read_jsonl(toy / "test.jsonl", alphabet),
            real_test=read_jsonl(toy / "real_test.jsonl", alphabet),
            corpus=(toy / "corpus.txt").read_text(encoding="utf-8").split(),
            excluded=[tuple(p) for p in gaps["excluded_bigrams"]],
        )

    def rec_config(self, seed: int, kind: str) -> R.RecognizerConfig:
        rc = dataclasses.replace(self.cfg.recognizer, seed=derive_seed(seed, tag(f"rec.{kind}")))
        if kind != "r" and self.cfg.sweep.synth_rec_epochs is not None:
            rc.epochs = self.cfg.sweep.synth_rec_epochs
        return rc

    def synth_params(self):
        params, _, _ = S.load(self.root / "ckpt" / "synth.ckpt")
        return params

    def n_synth(self, factor: float) -> int:
        return int(round(factor * len(self.train)))

    def synth_train_set(self, params, seed: int, bias: float, corpus: Sequence[str], count: int, label: str):
        texts = D.synthesis_texts(corpus, count, derive_seed(seed, tag(f"texts.{label}")))
        seeds = [derive_seed(seed, tag("synth.train"), i) for i in range(count)]
        ids = [f"{label}-s{seed}-{bias_dir(bias)}-{i:06d}" for i in range(count)]
        return synthesize(params, texts, self.alphabet, bias, seeds, ids, "train", self.cfg.sweep.eps_z)

    def synth_test_set(self, params, seed: int, bias: float):
        count = int(round(self.cfg.sweep.synth_test_factor * len(self.test)))
        texts = D.synthesis_texts([s.content for s in self.test], count, derive_seed(seed, tag("texts.test")))
        seeds = [derive_seed(seed, tag("synth.test"), i) for i in range(count)]
        ids = [f"test-s{seed}-{bias_dir(bias)}-{i:06d}" for i in range(count)]
        return synthesize(params, texts, self.alphabet, bias, seeds, ids, "test", self.cfg.sweep.eps_z)

    def train_recognizer(self, samples, seed: int, kind: str, path: Path):
        rc = self.rec_config(seed, kind)
        res = R.train_rec(samples, self.alphabet, rc, val=self.val)
        R.save(path, res.params, rc, self.alphabet, {"trained_on": kind, "best_epoch": res.best_epoch})
        return res.params, rc, {"history": res.history, "best_epoch": res.best_epoch, "skipped": res.skipped}


def _cer(ctx: Context, model, samples) -> float:
    params, rc = model
    return R.evaluate(params, samples, ctx.alphabet, rc)[1]


# ----------------------------------------------------------------------------
# stages (module-level so that worker processes can run them)


def task_real(root: str, cfg_dict: dict, seed: int) -> dict:
    ctx = Context.load(root, cfg_dict)
    t0 = time.perf_counter()
    ckdir = ctx.root / "ckpt" / f"seed{seed}"
    ckdir.mkdir(parents=True, exist_ok=True)
    _, _, info = ctx.train_recognizer(ctx.train, seed, "r", ckdir / "rec_r.ckpt")
    write_json(ctx.root / "metrics" / f"seed{seed}" / "train_r.json", info)
    return {"seconds": time.perf_counter() - t0}


def task_bias(root: str, cfg_dict: dict, seed: int, bias: float) -> dict:
    ctx = Context.load(root, cfg_dict)
    t0 = time.perf_counter()
    params = ctx.synth_params()
    bd = bias_dir(bias)
    ddir = ctx.root / "data" / f"seed{seed}" / bd
    cdir = ctx.root / "ckpt" / f"seed{seed}" / bd
    mdir = ctx.root / "metrics" / f"seed{seed}" / bd
    for d in (ddir, cdir, mdir):
        d.mkdir(parents=True, exist_ok=True)

    s_train, hit_train = ctx.synth_train_set(params, seed, bias, ctx.corpus,
                                             ctx.n_synth(ctx.cfg.sweep.synth_factor), "same")
    s_test, hit_test = ctx.synth_test_set(params, seed, bias)
    write_jsonl(ddir / "synth_train.jsonl", s_train)
    write_jsonl(ddir / "synth_test.jsonl", s_test)
    t_gen = time.perf_counter() - t0

    r_params, r_cfg, _ = R.load(ctx.root / "ckpt" / f"seed{seed}" / "rec_r.ckpt")
    s_params, s_cfg, s_info = ctx.train_recognizer(s_train, seed, "s", cdir / "rec_s.ckpt")
    mixed = D.mix_datasets(ctx.train, s_train, {"ratio": ctx.cfg.sweep.synth_factor},
                           derive_seed(seed, tag("mix")))
    b_params, b_cfg, b_info = ctx.train_recognizer(mixed, seed, "b", cdir / "rec_b.ckpt")

    models = {"r": (r_params, r_cfg), "s": (s_params, s_cfg), "b": (b_params, b_cfg)}
    matrix = build_cer_matrix(models, {"r": ctx.real_test, "s": s_test}, lambda m, t: _cer(ctx, m, t),
                              {"seed": seed, "bias": bias})
    diag = diagnose(matrix, ctx.cfg.sweep.tau)
    (mdir / "cer_matrix.json").write_text(matrix.dumps(), encoding="utf-8")
    (mdir / "diagnosis.json").write_text(diag.dumps(), encoding="utf-8")
    write_json(mdir / "synthesis.json", {"n_train": len(s_train), "n_test": len(s_test),
                                         "hit_t_max_train": hit_train, "hit_t_max_test": hit_test,
                                         "mean_len_train": float(np.mean([len(s) for s in s_train]))})
    write_json(mdir / "train_s.json", s_info)
    write_json(mdir / "train_b.json", b_info)
    return {"seconds": time.perf_counter() - t0, "generation_seconds": t_gen}


def task_expand(root: str, cfg_dict: dict, seed: int, bias: float) -> dict:
    """Same-corpus vs corpus-expanded synthesis at one bias, scored on the bigram-gap slice."""
    ctx = Context.load(root, cfg_dict)
    t0 = time.perf_counter()
    params = ctx.synth_params()
    count = ctx.n_synth(ctx.cfg.sweep.synth_factor)
    texts, coverage = D.expand_corpus(ctx.corpus, ctx.excluded, ctx.cfg.sweep.expand_n_min,
                                      derive_seed(seed, tag("expand")))
    samples, hits = ctx.synth_train_set(params, seed, bias, texts, count, "expanded")
    ddir = ctx.root / "data" / f"seed{seed}" / "expanded"
    ddir.mkdir(parents=True, exist_ok=True)
    write_jsonl(ddir / "synth_train.jsonl", samples)
    (ddir / "corpus.txt").write_text("".join(t + "\n" for t in texts), encoding="utf-8")
    mixed = D.mix_datasets(ctx.train, samples, {"ratio": ctx.cfg.sweep.synth_factor}, derive_seed(seed, tag("mix")))
    cdir = ctx.root / "ckpt" / f"seed{seed}" / "expanded"
    cdir.mkdir(parents=True, exist_ok=True)
    e_params, e_cfg, e_info = ctx.train_recognizer(mixed, seed, "b", cdir / "rec_b.ckpt")

    gap = D.bigram_gap_slice(ctx.real_test, ctx.excluded)
    if not gap:
        raise SweepError("the real test split has no sample with an excluded bigram")
    same = R.load(ctx.root / "ckpt" / f"seed{seed}" / bias_dir(bias) / "rec_b.ckpt")[:2]
    real = R.load(ctx.root / "ckpt" / f"seed{seed}" / "rec_r.ckpt")[:2]
    out = {
        "seed": seed, "bias": bias, "n_gap_slice": len(gap), "coverage": coverage,
        "hit_t_max": hits,
        "gap_cer": {"r": _cer(ctx, real, gap), "b_same": _cer(ctx, same, gap),
                    "b_expanded": _cer(ctx, (e_params, e_cfg), gap)},
        "real_test_cer": {"b_expanded": _cer(ctx, (e_params, e_cfg), ctx.real_test)},
    }
    write_json(ctx.root / "metrics" / f"seed{seed}" / "expansion.json", out)
    write_json(ctx.root / "metrics" / f"seed{seed}" / "train_expanded.json", e_info)
    return {"seconds": time.perf_counter() - t0}


def task_amount(root: str, cfg_dict: dict, seed: int, bias: float, factor: float) -> dict:
    """Mixed recognizer with ``factor`` times the real count of synthetic samples."""
    ctx = Context.load(root, cfg_dict)
    t0 = time.perf_counter()
    params = ctx.synth_params()
    samples, _ = ctx.synth_train_set(params, seed, bias, ctx.corpus, ctx.n_synth(factor), f"amount{factor:g}")
    mixed = D.mix_datasets(ctx.train, samples, {"ratio": factor}, derive_seed(seed, tag("mix")))
    rc = ctx.rec_config(seed, "b")
    res = R.train_rec(mixed, ctx.alphabet, rc, val=ctx.val)
    cer = R.evaluate(res.params, ctx.real_test, ctx.alphabet, rc)[1]
    write_json(ctx.root / "metrics" / f"seed{seed}" / "amounts" / f"x{factor:g}.json",
               {"seed": seed, "bias": bias, "factor": factor, "n_synth": len(samples), "m_br": cer})
    return {"seconds": time.perf_counter() - t0}


def _run_tasks(fn, arg_list: list[tuple], workers: int) -> list[dict]:
    if workers <= 1 or len(arg_list) <= 1:
        return [fn(*a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork")) as pool:
        futures = [pool.submit(fn, *a) for a in arg_list]
        return [f.result() for f in futures]


# ----------------------------------------------------------------------------
# aggregation


def mean_matrix(matrices: Sequence[CerMatrix], meta: dict | None = None) -> CerMatrix:
    m = {t: {v: float(np.mean([x[t][v] for x in matrices])) for v in EVAL_SETS} for t in TRAIN_SETS}
    return CerMatrix(m, dict(meta or {}))


def select_bias(biases: Sequence[float], mean_br: Sequence[float]) -> float:
    """argmin of mean m_br over the grid; the smallest bias wins ties."""
    return float(biases[int(np.argmin(mean_br))])


def build_sweep_report(root: Path, cfg: ExperimentConfig) -> dict:
    entries = []
    for b in cfg.sweep.biases:
        mats = {}
        labels = {}
        for seed in cfg.seeds:
            mdir = root / "metrics" / f"seed{seed}" / bias_dir(b)
            if not (mdir / "cer_matrix.json").exists():
                raise SweepError(f"missing {mdir / 'cer_matrix.json'}")
            mats[seed] = CerMatrix.loads((mdir / "cer_matrix.json").read_text(encoding="utf-8"))
            labels[str(seed)] = read_json(mdir / "diagnosis.json")["label"]
        mean = mean_matrix(list(mats.values()), {"bias": b, "seeds": list(cfg.seeds)})
        diag = diagnose(mean, cfg.sweep.tau)
        entries.append({
            "bias": b,
            "matrices": {str(s): {k: v for k, v in m.to_dict().items() if k != "meta"} for s, m in mats.items()},
            "mean_matrix": {k: v for k, v in mean.to_dict().items() if k != "meta"},
            "diagnosis": diag.to_dict(),
            "seed_diagnoses": labels,
        })
    mean_br = [e["mean_matrix"]["m_br"] for e in entries]
    b_star = select_bias(cfg.sweep.biases, mean_br)
    return {
        "biases": list(cfg.sweep.biases),
        "seeds": list(cfg.seeds),
        "entries": entries,
        "b_star": b_star,
        "selection_rule": "argmin over the bias grid of m_br averaged over seeds; smallest bias on ties",
        "mean_m_rr": float(np.mean([e["mean_matrix"]["m_rr"] for e in entries])),
    }


def summarize_expansion(root: Path, cfg: ExperimentConfig) -> dict | None:
    per_seed = []
    for seed in cfg.seeds:
        p = root / "metrics" / f"seed{seed}" / "expansion.json"
        if p.exists():
            per_seed.append(read_json(p))
    if not per_seed:
        return None
    keys = per_seed[0]["gap_cer"].keys()
    return {
        "bias": per_seed[0]["bias"],
        "n_gap_slice": per_seed[0]["n_gap_slice"],
        "mean_gap_cer": {k: float(np.mean([e["gap_cer"][k] for e in per_seed])) for k in keys},
        "per_seed": {str(e["seed"]): e["gap_cer"] for e in per_seed},
    }


def summarize_amounts(root: Path, cfg: ExperimentConfig) -> dict | None:
    if not cfg.sweep.amount_factors:
        return None
    rows = {}
    for f in cfg.sweep.amount_factors:
        vals = [read_json(root / "metrics" / f"seed{s}" / "amounts" / f"x{f:g}.json")["m_br"] for s in cfg.seeds]
        rows[f"{f:g}"] = float(np.mean(vals))
    return {"mean_m_br": rows}


# ----------------------------------------------------------------------------
# manifest


DIGEST_GROUPS = (("datasets", "data"), ("checkpoints", "ckpt"), ("metrics", "metrics"), ("reports", "report"))


def write_manifest(root: Path, cfg: ExperimentConfig) -> dict:
    manifest = {
        "tool": "inkubator",
        "version": __version__,
        "config": cfg.to_dict(),
        "master_seeds": list(cfg.seeds),
        "timings_file": "timings.json",
    }
    for key, sub in DIGEST_GROUPS:
        files = sorted(p for p in (root / sub).rglob("*") if p.is_file())
        manifest[key] = {p.relative_to(root).as_posix(): sha256_file(p) for p in files}
    manifest["config_digest"] = sha256_file(root / "config.json")
    write_json(root / "manifest.json", manifest)
    return manifest


def verify_manifest(root) -> list[str]:
    """Paths whose current digest differs from the manifest (missing files included)."""
    root = Path(root)
    manifest = read_json(root / "manifest.json")
    bad = []
    for key, _ in DIGEST_GROUPS:
        for rel, digest in manifest[key].items():
            p = root / rel
            if not p.exists() or sha256_file(p) != digest:
                bad.append(rel)
    return bad


# ----------------------------------------------------------------------------
# driver


def run_sweep(cfg: ExperimentConfig, out_parent=None, run_dir=None) -> dict:
    """Run the full sweep into a fresh run directory; returns the sweep report dict."""
    from . import report as report_mod

    if run_dir is None:
        if out_parent is None:
            raise SweepError("either out_parent or run_dir is required")
        root = new_run_dir(out_parent, cfg.sweep.tag)
    else:
        root = Path(run_dir)
        if root.exists() and any(root.iterdir()):
            raise SweepError(f"run directory {root} is not empty")
        root.mkdir(parents=True, exist_ok=True)
    log.info("sweep run directory %s", root)
    (root / "config.json").write_text(cfg.dumps(), encoding="utf-8")
    cfg_dict = cfg.to_dict()
    workers = cfg.sweep.workers
    timings: dict = {}

    def timed(name, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        timings[name] = time.perf_counter() - t0
        return out

    ds = timed("toygen", build_dataset, cfg.toyworld)
    ds.write(root / "data" / "toy", cfg.toyworld)

    def train_synth_stage():
        sc = cfg.synth
        val = ds.val[:cfg.sweep.synth_val_count]
        res = S.train_synth(ds.train, cfg.toyworld.alphabet, sc, val=val)
        S.save(root / "ckpt" / "synth.ckpt", res.params, sc, cfg.toyworld.alphabet)
        write_json(root / "metrics" / "synth_history.json", res.history)

    (root / "ckpt").mkdir(exist_ok=True)
    timed("train_synth", train_synth_stage)

    timed("recognizers_r", _run_tasks, task_real, [(str(root), cfg_dict, s) for s in cfg.seeds], workers)
    timed("bias_sweep", _run_tasks, task_bias,
          [(str(root), cfg_dict, s, b) for s in cfg.seeds for b in cfg.sweep.biases], workers)

    report = build_sweep_report(root, cfg)
    b_star = report["b_star"]
    if cfg.sweep.expand:
        timed("expansion", _run_tasks, task_expand, [(str(root), cfg_dict, s, b_star) for s in cfg.seeds], workers)
        report["expansion"] = summarize_expansion(root, cfg)
    if cfg.sweep.amount_factors:
        timed("amounts", _run_tasks, task_amount,
              [(str(root), cfg_dict, s, b_star, f) for s in cfg.seeds for f in cfg.sweep.amount_factors], workers)
        report["amounts"] = summarize_amounts(root, cfg)
    write_json(root / "metrics" / "sweep_report.json", report)

    timed("report", report_mod.write_report, root)
    write_manifest(root, cfg)
    timings["total"] = sum(timings.values())
    write_json(root / "timings.json", timings)
    log.info("sweep finished in %.1f s; b* = %g", timings["total"], b_star)
    report["run_dir"] = str(root)
    return report

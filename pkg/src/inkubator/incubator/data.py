"""Dataset mixing, corpus expansion and the bigram-gap slice."""
from __future__ import annotations

from collections import Counter
from typing import Sequence

import numpy as np

from ..ink import StrokeSample
from ..toyworld import MAX_WORD, MIN_WORD, BigramModel, bigrams

SOURCES = ("real", "synth")


class MixError(ValueError):
    pass


def tag_source(sample: StrokeSample, source: str) -> StrokeSample:
    extra = dict(sample.extra)
    extra["source"] = source
    return sample.replace(id=f"{source}/{sample.id}", extra=extra)


def source_of(sample: StrokeSample) -> str:
    return sample.extra.get("source") or sample.id.split("/", 1)[0]


def mix_datasets(real: Sequence[StrokeSample], synth: Sequence[StrokeSample], policy: dict,
                 seed: int) -> list[StrokeSample]:
    """Combine real and synthetic samples under ``policy`` and shuffle.

    ``policy`` is either ``{"ratio": k}`` (k synthetic samples per real one,
    all real samples kept) or ``{"real": n, "synth": m}`` with explicit counts.
    Ids gain a ``real/`` or ``synth/`` prefix that records the source.
    """
    if "ratio" in policy:
        if set(policy) != {"ratio"}:
            raise MixError("ratio policy takes no other keys")
        k = float(policy["ratio"])
        if k < 0:
            raise MixError("ratio must be >= 0")
        n_real, n_synth = len(real), int(round(k * len(real)))
    elif set(policy) <= {"real", "synth"} and policy:
        n_real = int(policy.get("real", len(real)))
        n_synth = int(policy.get("synth", len(synth)))
    else:
        raise MixError(f"unrecognized mixing policy {policy!r}")
    if n_real < 0 or n_synth < 0:
        raise MixError("counts must be >= 0")
    if n_real > len(real):
        raise MixError(f"requested {n_real} real samples, only {len(real)} available")
    if n_synth > len(synth):
        raise MixError(f"requested {n_synth} synthetic samples, only {len(synth)} available")
    rng = np.random.default_rng(seed)
    pick_r = np.sort(rng.choice(len(real), n_real, replace=False)) if n_real < len(real) else range(n_real)
    pick_s = np.sort(rng.choice(len(synth), n_synth, replace=False)) if n_synth < len(synth) else range(n_synth)
    out = [tag_source(real[i], "real") for i in pick_r] + [tag_source(synth[i], "synth") for i in pick_s]
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise MixError("sample ids are not unique after source tagging")
    return [out[i] for i in rng.permutation(len(out))]


def count_bigram(texts: Sequence[str], pair: tuple[str, str]) -> int:
    return sum(1 for t in texts for bg in bigrams(t) if bg == tuple(pair))


def expand_corpus(base: Sequence[str], targets, n_min: int, seed: int,
                  lm: BigramModel | None = None) -> tuple[list[str], dict]:
    """Append bigram-model texts until every target pair occurs ``n_min`` times.

    Each added text starts with one target pair and continues with the
    unconstrained bigram model, so word lengths stay within the toy range.
    Returns the texts (base first) and a coverage report.
    """
    targets = sorted({tuple(p) for p in targets})
    texts = list(base)
    report = {"n_min": n_min, "n_base": len(base), "n_added": 0, "coverage": {}}
    if not targets:
        return texts, report
    lm = lm or BigramModel()
    idx = {c: i for i, c in enumerate(lm.chars)}
    for pair in targets:
        if len(pair) != 2 or any(c not in idx for c in pair):
            raise ValueError(f"target pattern {''.join(pair)!r} is not a bigram over the alphabet")
        if lm.trans[idx[pair[0]], idx[pair[1]]] <= 0:
            raise ValueError(f"target pattern {''.join(pair)!r} has zero probability under the bigram model")
    rng = np.random.default_rng(seed)
    counts = Counter()
    for t in texts:
        counts.update(bigrams(t))
    added = []
    for pair in targets:
        while counts[pair] < n_min:
            n = int(rng.integers(MIN_WORD, MAX_WORD + 1))
            text = pair[0] + pair[1] + lm.sample_continuation(rng, pair[1], n - 2)
            counts.update(bigrams(text))
            added.append(text)
    texts.extend(added)
    report["n_added"] = len(added)
    report["coverage"] = {a + b: counts[(a, b)] for a, b in targets}
    return texts, report


def synthesis_texts(corpus: Sequence[str], count: int, seed: int) -> list[str]:
    """``count`` texts drawn by cycling through shuffled copies of the corpus.

    With ``count`` a multiple of the corpus size every text appears equally often.
    """
    if not corpus:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(seed)
    out: list[str] = []
    while len(out) < count:
        out.extend(corpus[i] for i in rng.permutation(len(corpus)))
    return out[:count]


def bigram_gap_slice(samples: Sequence[StrokeSample], excluded) -> list[StrokeSample]:
    excluded = {tuple(p) for p in excluded}
    return [s for s in samples if any(bg in excluded for bg in bigrams(s.content))]

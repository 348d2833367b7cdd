"""Procedural ground-truth handwriting.

Stands in for collected data: ten parametric glyphs, writers drawn from K style
clusters, and texts from a fixed bigram model. A `ToyConfig` can hide style
clusters and bigrams from the collected splits while the real test split keeps
the full distribution, which creates the content and style gaps the incubation
recipe is meant to fill.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ink import Alphabet, StrokeSample, from_absolute, write_jsonl
from .seeding import splitmix64, tag

TOY_CHARS = "abcdefghij"

# Polylines in the unit box; shapes only need to be mutually distinguishable.
GLYPHS: dict[str, list[list[tuple[float, float]]]] = {
    "a": [[(0.6, 0.45), (0.4, 0.5), (0.15, 0.42), (0.05, 0.22), (0.2, 0.02), (0.45, 0.03),
           (0.6, 0.2), (0.6, 0.5), (0.62, 0.0)]],
    "b": [[(0.1, 1.0), (0.1, 0.0), (0.35, 0.05), (0.55, 0.2), (0.5, 0.42), (0.3, 0.5), (0.1, 0.4)]],
    "c": [[(0.55, 0.42), (0.35, 0.5), (0.12, 0.38), (0.08, 0.15), (0.3, 0.0), (0.58, 0.08)]],
    "d": [[(0.55, 0.4), (0.3, 0.5), (0.08, 0.35), (0.1, 0.1), (0.3, 0.0), (0.55, 0.1)],
          [(0.58, 1.0), (0.58, 0.0)]],
    "e": [[(0.1, 0.25), (0.55, 0.28), (0.45, 0.48), (0.25, 0.5), (0.08, 0.3), (0.15, 0.05),
           (0.4, 0.0), (0.58, 0.1)]],
    "f": [[(0.6, 0.95), (0.4, 1.0), (0.25, 0.85), (0.25, 0.0)], [(0.05, 0.5), (0.5, 0.5)]],
    "g": [[(0.05, 0.5), (0.25, 0.0), (0.45, 0.5), (0.65, 0.0), (0.8, 0.5)]],
    "h": [[(0.1, 1.0), (0.1, 0.0), (0.1, 0.35), (0.3, 0.5), (0.5, 0.4), (0.5, 0.0)]],
    "i": [[(0.2, 0.6), (0.2, 0.0)], [(0.2, 0.82), (0.26, 0.9)]],
    "j": [[(0.1, 0.0), (0.5, 0.0), (0.5, 0.5), (0.1, 0.5), (0.1, 0.15), (0.35, 0.15)]],
}

# (slant, scale, jitter_sigma, spacing, cursive_prob, speed) per cluster
CLUSTER_CENTERS = [
    (0.35, 1.0, 0.010, 0.25, 0.10, 5),
    (-0.30, 0.8, 0.020, 0.40, 0.20, 6),
    (0.0, 1.3, 0.030, 0.10, 0.85, 4),
    (0.35, 1.1, 0.030, 0.12, 0.80, 4),
    (-0.30, 0.7, 0.025, 0.35, 0.60, 6),
]
CLUSTER_SPREAD = (0.05, 0.1, 0.005, 0.05, 0.1)
LM_SEED = 2021
MIN_WORD, MAX_WORD = 2, 6


class ToyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphSkeleton:
    char: str
    polylines: tuple

    @property
    def width(self) -> float:
        return max(p[0] for line in self.polylines for p in line)


def skeleton(char: str) -> GlyphSkeleton:
    if char not in GLYPHS:
        raise ToyConfigError(f"no glyph skeleton for {char!r}")
    return GlyphSkeleton(char, tuple(np.array(pl, dtype=np.float64) for pl in GLYPHS[char]))


@dataclass
class WriterStyle:
    cluster_id: int
    slant: float
    scale: float
    jitter_sigma: float
    spacing: float
    cursive_prob: float
    speed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def cluster_centers(k: int) -> list[tuple]:
    centers = list(CLUSTER_CENTERS[:k])
    extra = np.random.default_rng(splitmix64(tag("toyworld.clusters")))
    while len(centers) < k:
        centers.append((extra.uniform(-0.45, 0.45), extra.uniform(0.6, 1.8), extra.uniform(0.005, 0.04),
                        extra.uniform(0.1, 0.5), extra.uniform(0, 1), int(extra.integers(4, 8))))
    return centers


def sample_writer(cluster_id: int, rng: np.random.Generator, n_clusters: int = 5) -> WriterStyle:
    if not 0 <= cluster_id < n_clusters:
        raise ToyConfigError(f"cluster id {cluster_id} outside [0, {n_clusters})")
    slant, scale, jitter, spacing, cursive, speed = cluster_centers(n_clusters)[cluster_id]
    d = rng.normal(size=5) * CLUSTER_SPREAD
    return WriterStyle(
        cluster_id=cluster_id,
        slant=float(np.clip(slant + d[0], -0.5, 0.5)),
        scale=float(np.clip(scale + d[1], 0.5, 2.0)),
        jitter_sigma=float(max(jitter + d[2], 0.0)),
        spacing=float(max(spacing + d[3], 0.02)),
        cursive_prob=float(np.clip(cursive + d[4], 0.0, 1.0)),
        speed=int(max(2, speed + int(rng.integers(-1, 2)))),
    )


def resample(polyline: np.ndarray, speed: int) -> np.ndarray:
    """Points at equal arc-length spacing, ``speed`` per unit length; endpoints kept."""
    seg = np.hypot(*np.diff(polyline, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(2, int(round(cum[-1] * speed)) + 1)
    s = np.linspace(0.0, cum[-1], n)
    pts = np.stack([np.interp(s, cum, polyline[:, 0]), np.interp(s, cum, polyline[:, 1])], axis=1)
    pts[0], pts[-1] = polyline[0], polyline[-1]
    return pts


def write_text(text: str, style: WriterStyle, rng: np.random.Generator, sample_id: str = "toy",
               writer_id: str | None = None) -> StrokeSample:
    if not text:
        raise ToyConfigError("cannot write empty text")
    glyphs = [skeleton(c) for c in text]
    points: list[np.ndarray] = []
    pens: list[np.ndarray] = []
    cursor = 0.0
    for gi, glyph in enumerate(glyphs):
        for li, line in enumerate(glyph.polylines):
            pts = resample(line + np.array([cursor, 0.0]), style.speed)
            joined = gi > 0 and li == 0 and rng.random() < style.cursive_prob
            if joined:
                # pen-down connector from the previous glyph's last point
                conn = resample(np.stack([points[-1][-1], pts[0]]), style.speed)[1:-1]
                if len(conn):
                    points.append(conn)
                    pens.append(np.ones(len(conn)))
            pen = np.ones(len(pts))
            pen[0] = 1.0 if joined else 0.0
            points.append(pts)
            pens.append(pen)
        cursor += glyph.width + style.spacing
    xy = np.concatenate(points)
    pen = np.concatenate(pens)
    if style.jitter_sigma > 0:
        xy = xy + rng.normal(scale=style.jitter_sigma, size=xy.shape)
    xy = np.stack([xy[:, 0] + style.slant * xy[:, 1], xy[:, 1]], axis=1) * style.scale
    moves = from_absolute(np.column_stack([xy, pen]))
    return StrokeSample(id=sample_id, content=text, moves=moves, writer_id=writer_id, lang="toy")


# ----------------------------------------------------------------------------
# content model


class BigramModel:
    def __init__(self, chars: str = TOY_CHARS, excluded: frozenset = frozenset()):
        rng = np.random.default_rng(LM_SEED)
        q = len(chars)
        self.chars = chars
        self.start = rng.dirichlet(np.full(q, 2.0))
        self.trans = rng.dirichlet(np.full(q, 0.7), size=q) + 1e-3
        self.trans /= self.trans.sum(axis=1, keepdims=True)
        self.excluded = frozenset(excluded)
        idx = {c: i for i, c in enumerate(chars)}
        for a, b in self.excluded:
            if a not in idx or b not in idx:
                raise ToyConfigError(f"excluded bigram {a + b!r} uses characters outside the alphabet")
            self.trans[idx[a], idx[b]] = 0.0
        rows = self.trans.sum(axis=1)
        if (rows <= 0).any():
            dead = [chars[i] for i in np.flatnonzero(rows <= 0)]
            raise ToyConfigError(f"no bigram left after exclusions for {dead}")
        self.trans /= rows[:, None]

    def sample_word(self, rng: np.random.Generator, length: int | None = None) -> str:
        n = int(rng.integers(MIN_WORD, MAX_WORD + 1)) if length is None else length
        i = int(rng.choice(len(self.chars), p=self.start))
        out = [i]
        for _ in range(n - 1):
            i = int(rng.choice(len(self.chars), p=self.trans[i]))
            out.append(i)
        return "".join(self.chars[j] for j in out)

    def sample_continuation(self, rng: np.random.Generator, first: str, n: int) -> str:
        i = self.chars.index(first)
        out = []
        for _ in range(n):
            i = int(rng.choice(len(self.chars), p=self.trans[i]))
            out.append(self.chars[i])
        return "".join(out)


def bigrams(text: str):
    return zip(text, text[1:])


def choose_excluded_bigrams(chars: str, fraction: float, rng: np.random.Generator | None = None,
                            policy: str = "rare") -> frozenset:
    """Pick ``round(fraction * Q^2)`` pairs, keeping at least two successors per character.

    ``policy="rare"`` takes the pairs with the lowest bigram-model transition
    probability (deterministic); ``"uniform"`` takes a random subset from ``rng``.
    """
    pairs = [(a, b) for a in chars for b in chars]
    target = int(round(fraction * len(pairs)))
    if policy == "rare":
        trans = BigramModel(chars).trans
        order = sorted(range(len(pairs)), key=lambda k: (trans[k // len(chars), k % len(chars)], k))
    elif policy == "uniform":
        if rng is None:
            raise ToyConfigError("uniform exclusion needs an rng")
        order = rng.permutation(len(pairs))
    else:
        raise ToyConfigError(f"unknown exclusion policy {policy!r}")
    remaining = {a: len(chars) for a in chars}
    chosen = []
    for k in order:
        if len(chosen) == target:
            break
        a, b = pairs[k]
        if remaining[a] > 2:
            chosen.append((a, b))
            remaining[a] -= 1
    if len(chosen) < target:
        raise ToyConfigError(f"cannot exclude {target} bigrams and keep every character writable")
    return frozenset(chosen)


# ----------------------------------------------------------------------------
# datasets


@dataclass
class ToyConfig:
    alphabet_size: int = 10
    n_clusters: int = 5
    collected_clusters: tuple = (0, 1, 2)
    excluded_bigrams: tuple = ()
    exclude_fraction: float = 0.0
    exclude_policy: str = "rare"
    writers_per_cluster: int = 20
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 200
    n_real_test: int = 500
    master_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.alphabet_size <= len(TOY_CHARS):
            raise ToyConfigError(f"alphabet_size must be in [1, {len(TOY_CHARS)}]")
        if not self.collected_clusters:
            raise ToyConfigError("collected_clusters must be non-empty")
        if any(not 0 <= c < self.n_clusters for c in self.collected_clusters):
            raise ToyConfigError("collected_clusters must lie in [0, n_clusters)")
        chars = self.chars
        for pair in self.excluded_bigrams:
            if len(pair) != 2 or any(c not in chars for c in pair):
                raise ToyConfigError(f"excluded bigram {pair!r} is not over the toy alphabet")
        if not 0.0 <= self.exclude_fraction < 1.0:
            raise ToyConfigError("exclude_fraction must be in [0, 1)")
        if self.exclude_policy not in ("rare", "uniform"):
            raise ToyConfigError("exclude_policy must be 'rare' or 'uniform'")
        self.collected_clusters = tuple(sorted(set(self.collected_clusters)))
        self.excluded_bigrams = tuple(tuple(p) for p in self.excluded_bigrams)

    @property
    def chars(self) -> str:
        return TOY_CHARS[:self.alphabet_size]

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(tuple(self.chars))

    def resolved_exclusions(self) -> frozenset:
        if self.excluded_bigrams:
            return frozenset(self.excluded_bigrams)
        if self.exclude_fraction > 0:
            rng = np.random.default_rng(splitmix64(self.master_seed ^ tag("toyworld.exclusions")))
            return choose_excluded_bigrams(self.chars, self.exclude_fraction, rng, self.exclude_policy)
        return frozenset()


@dataclass
class ToyDataset:
    train: list
    val: list
    test: list
    real_test: list
    corpus: list
    excluded_bigrams: frozenset
    writers: dict = field(default_factory=dict)

    def gap_report(self, config: ToyConfig) -> dict:
        def clusters(samples):
            hist: dict[str, int] = {}
            for s in samples:
                k = str(self.writers[s.writer_id].cluster_id)
                hist[k] = hist.get(k, 0) + 1
            return dict(sorted(hist.items()))

        def gap_hits(samples):
            return sum(1 for s in samples if any(bg in self.excluded_bigrams for bg in bigrams(s.content)))

        collected = self.train + self.val + self.test
        return {
            "excluded_bigrams": sorted(a + b for a, b in self.excluded_bigrams),
            "collected_clusters": list(config.collected_clusters),
            "n_clusters": config.n_clusters,
            "collected_cluster_hist": clusters(collected),
            "real_test_cluster_hist": clusters(self.real_test),
            "collected_samples_with_excluded_bigram": gap_hits(collected),
            "real_test_samples_with_excluded_bigram": gap_hits(self.real_test),
        }

    def write(self, out_dir, config: ToyConfig) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name in ("train", "val", "test", "real_test"):
            paths[name] = out / f"{name}.jsonl"
            write_jsonl(paths[name], getattr(self, name))
        paths["corpus"] = out / "corpus.txt"
        paths["corpus"].write_text("".join(t + "\n" for t in self.corpus), encoding="utf-8")
        paths["gaps"] = out / "gaps.json"
        paths["gaps"].write_text(json.dumps(self.gap_report(config), indent=2, sort_keys=True) + "\n")
        paths["writers"] = out / "writers.json"
        paths["writers"].write_text(json.dumps({k: v.to_dict() for k, v in sorted(self.writers.items())},
                                               indent=2, sort_keys=True) + "\n")
        return paths


def build_dataset(config: ToyConfig) -> ToyDataset:
    excluded = config.resolved_exclusions()
    full_lm = BigramModel(config.chars)
    collected_lm = BigramModel(config.chars, excluded)

    writers: dict[str, WriterStyle] = {}
    by_cluster: dict[int, list[str]] = {}
    for k in range(config.n_clusters):
        for w in range(config.writers_per_cluster):
            wi = k * config.writers_per_cluster + w
            rng = np.random.default_rng(splitmix64(config.master_seed ^ tag("toyworld.writer") ^ wi))
            wid = f"w{k}-{w:03d}"
            writers[wid] = sample_writer(k, rng, config.n_clusters)
            by_cluster.setdefault(k, []).append(wid)
    collected_writers = [w for k in config.collected_clusters for w in by_cluster[k]]
    all_writers = [w for k in range(config.n_clusters) for w in by_cluster[k]]

    def make(index: int, split: str, lm: BigramModel, pool: list[str], prefix: str) -> StrokeSample:
        rng = np.random.default_rng(splitmix64(config.master_seed ^ index))
        text = lm.sample_word(rng)
        wid = pool[int(rng.integers(len(pool)))]
        s = write_text(text, writers[wid], rng, sample_id=f"{prefix}{index:06d}", writer_id=wid)
        s.split = split
        return s

    splits = {}
    index = 0
    for name, n, lm, pool, prefix, split in (
        ("train", config.n_train, collected_lm, collected_writers, "c", "train"),
        ("val", config.n_val, collected_lm, collected_writers, "c", "val"),
        ("test", config.n_test, collected_lm, collected_writers, "c", "test"),
        ("real_test", config.n_real_test, full_lm, all_writers, "r", "test"),
    ):
        splits[name] = [make(index + i, split, lm, pool, prefix) for i in range(n)]
        index += n
    corpus = [s.content for s in splits["train"]]
    return ToyDataset(corpus=corpus, excluded_bigrams=excluded, writers=writers, **splits)


def cluster_of(writer_id: str) -> int:
    return int(writer_id[1:].split("-")[0])

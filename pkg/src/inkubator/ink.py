"""Online handwriting samples: data model, features, normalization, I/O, SVG."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Sequence
from xml.sax.saxutils import escape

import numpy as np


class InkError(ValueError):
    """Invalid or degenerate handwriting sample."""


class CodecError(InkError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class Alphabet:
    chars: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "chars", tuple(self.chars))
        if len(self.chars) < 1:
            raise InkError("alphabet must contain at least one character")
        if len(set(self.chars)) != len(self.chars):
            raise InkError("alphabet contains duplicate characters")
        if any(len(c) != 1 for c in self.chars):
            raise InkError("alphabet entries must be single characters")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @property
    def size(self) -> int:
        return len(self.chars)

    @property
    def blank_index(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as e:
            raise InkError(f"character {e.args[0]!r} not in alphabet") from None

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.chars[i] for i in indices)

    def __contains__(self, ch: str) -> bool:
        return ch in self._index


@dataclass
class StrokeSample:
    """Pen movements ``moves[t] = (dx, dy, pen_down)`` with their text."""

    id: str
    content: str
    moves: np.ndarray
    writer_id: str | None = None
    lang: str | None = None
    split: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.moves = np.asarray(self.moves, dtype=np.float64).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.moves)

    @property
    def pen(self) -> np.ndarray:
        return self.moves[:, 2]

    def validate(self, alphabet: Alphabet | None = None) -> "StrokeSample":
        if len(self.moves) < 1:
            raise InkError(f"sample {self.id}: no moves")
        if not np.isfinite(self.moves[:, :2]).all():
            raise InkError(f"sample {self.id}: non-finite offsets")
        u = self.moves[:, 2]
        if not np.all((u == 0) | (u == 1)):
            raise InkError(f"sample {self.id}: pen_down must be 0 or 1")
        if not self.content:
            raise InkError(f"sample {self.id}: empty content")
        if alphabet is not None:
            alphabet.encode(self.content)
        return self

    def replace(self, **kw) -> "StrokeSample":
        d = dict(id=self.id, content=self.content, moves=self.moves, writer_id=self.writer_id,
                 lang=self.lang, split=self.split, extra=dict(self.extra))
        d.update(kw)
        return StrokeSample(**d)


def to_absolute(sample: StrokeSample) -> np.ndarray:
    """Prefix sums of the offsets; returns (T, 3) points ``(x, y, pen_down)``."""
    pts = sample.moves.copy()
    pts[:, :2] = np.cumsum(sample.moves[:, :2], axis=0)
    return pts


def from_absolute(points: np.ndarray) -> np.ndarray:
    """Inverse of `to_absolute`: first differences, with the origin as start."""
    points = np.asarray(points, dtype=np.float64)
    moves = points.copy()
    moves[1:, :2] = np.diff(points[:, :2], axis=0)
    return moves


def extract_features(sample: StrokeSample) -> np.ndarray:
    """Rows ``(u, sin theta, cos theta, length)`` per move.

    Zero-length moves get ``(sin, cos) = (0, 1)``.
    """
    dx, dy = sample.moves[:, 0], sample.moves[:, 1]
    length = np.hypot(dx, dy)
    nz = length > 0
    safe = np.where(nz, length, 1.0)
    sin = np.where(nz, dy / safe, 0.0)
    cos = np.where(nz, dx / safe, 1.0)
    return np.stack([sample.moves[:, 2], sin, cos, length], axis=1)


def normalize(sample: StrokeSample) -> StrokeSample:
    lengths = np.hypot(sample.moves[:, 0], sample.moves[:, 1])
    nz = lengths[lengths > 0]
    if nz.size == 0:
        raise InkError(f"sample {sample.id}: all moves have zero length")
    scale = nz.std()
    # a relative threshold: constant-length samples give std ~ 1e-17, not 0
    if scale <= 1e-12 * nz.mean():
        scale = nz.mean()
    moves = sample.moves.copy()
    moves[:, :2] /= scale
    return sample.replace(moves=moves)


def pen_down_runs(sample: StrokeSample) -> list[np.ndarray]:
    """Absolute polylines, one per maximal run of pen-down moves."""
    pts = to_absolute(sample)
    runs = []
    current: list = []
    prev = np.zeros(2)
    for p in pts:
        if p[2] == 1:
            if not current:
                current.append(prev.copy())
            current.append(p[:2].copy())
        elif current:
            runs.append(np.array(current))
            current = []
        prev = p[:2]
    if current:
        runs.append(np.array(current))
    return runs


def render_svg(sample: StrokeSample, stroke_width: float = 0.08, margin: float = 0.5) -> str:
    sample.validate()
    pts = to_absolute(sample)
    xy = np.vstack([np.zeros((1, 2)), pts[:, :2]])
    lo = xy.min(axis=0) - margin
    hi = xy.max(axis=0) + margin
    w, h = hi - lo
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{lo[0]:.4f} {-hi[1]:.4f} {w:.4f} {h:.4f}">',
        f"<title>{escape(sample.content)}</title>",
    ]
    for run in pen_down_runs(sample):
        # y axis points up in ink space, down in SVG
        d = " ".join(f"{x:.4f},{-y:.4f}" for x, y in run)
        lines.append(f'<polyline fill="none" stroke="black" stroke-width="{stroke_width}" '
                     f'stroke-linecap="round" stroke-linejoin="round" points="{d}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# JSONL codec

_FIELDS = ("id", "text", "writer", "lang", "split", "moves")
_SPLITS = (None, "train", "val", "test")


def _encode_move(m) -> list:
    return [float(m[0]), float(m[1]), int(m[2])]


def sample_to_record(s: StrokeSample) -> dict:
    return {
        "id": s.id,
        "text": s.content,
        "writer": s.writer_id,
        "lang": s.lang,
        "split": s.split,
        "moves": [_encode_move(m) for m in s.moves],
    }


def dumps_sample(s: StrokeSample) -> str:
    # json emits repr() of floats, which round-trips exactly
    return json.dumps(sample_to_record(s), ensure_ascii=False, separators=(", ", ": "))


def codec_write(samples: Iterable[StrokeSample], stream: IO[str]) -> int:
    n = 0
    for s in samples:
        stream.write(dumps_sample(s))
        stream.write("\n")
        n += 1
    return n


def parse_record(line: str, lineno: int, alphabet: Alphabet | None = None) -> StrokeSample:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise CodecError(lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(rec, dict):
        raise CodecError(lineno, "record is not an object")
    unknown = set(rec) - set(_FIELDS)
    if unknown:
        warnings.warn(f"line {lineno}: ignoring unknown fields {sorted(unknown)}", stacklevel=3)
    for key in ("id", "text", "moves"):
        if key not in rec:
            raise CodecError(lineno, f"missing required field {key!r}")
    if not isinstance(rec["id"], str) or not isinstance(rec["text"], str) or not rec["text"]:
        raise CodecError(lineno, "id and text must be strings, text non-empty")
    if rec.get("split") not in _SPLITS:
        raise CodecError(lineno, f"bad split {rec.get('split')!r}")
    moves = rec["moves"]
    if not isinstance(moves, list) or not moves:
        raise CodecError(lineno, "moves must be a non-empty list")
    arr = np.empty((len(moves), 3))
    for t, m in enumerate(moves):
        if not isinstance(m, list) or len(m) != 3:
            raise CodecError(lineno, f"move {t} is not [dx, dy, u]")
        dx, dy, u = m
        if isinstance(u, bool) or u not in (0, 1) or not isinstance(u, int):
            raise CodecError(lineno, f"move {t}: pen state must be 0 or 1, got {u!r}")
        if isinstance(dx, bool) or isinstance(dy, bool) or not isinstance(dx, (int, float)) \
                or not isinstance(dy, (int, float)):
            raise CodecError(lineno, f"move {t}: offsets must be numbers")
        arr[t] = (dx, dy, u)
    if alphabet is not None:
        bad = [c for c in rec["text"] if c not in alphabet]
        if bad:
            raise CodecError(lineno, f"unknown character {bad[0]!r}")
    return StrokeSample(id=rec["id"], content=rec["text"], moves=arr, writer_id=rec.get("writer"),
                        lang=rec.get("lang"), split=rec.get("split"))


def codec_read(stream: IO[str], alphabet: Alphabet | None = None) -> Iterator[StrokeSample]:
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        yield parse_record(line, lineno, alphabet)


def read_jsonl(path, alphabet: Alphabet | None = None) -> list[StrokeSample]:
    with open(path, encoding="utf-8") as f:
        return list(codec_read(f, alphabet))


def write_jsonl(path, samples: Sequence[StrokeSample]) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        return codec_write(samples, f)

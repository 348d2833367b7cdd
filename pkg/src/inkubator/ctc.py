"""Connectionist temporal classification: loss, greedy and prefix-beam decoding.

Lattices are (T', Q+1) arrays of per-frame log-probabilities with the blank
at index Q.
"""
from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from . import numerics as N
from .ink import Alphabet

NEG_INF = -np.inf


class InfeasibleAlignmentError(ValueError):
    """The lattice is too short for any alignment of the label."""


def min_frames(label: Sequence[int]) -> int:
    """Frames needed to emit ``label``: one per symbol plus a blank between repeats."""
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _extend(labels: Sequence[Sequence[int]], blank: int):
    """Blank-interleaved label matrix (B, S_max), lengths, and skip-allowed mask."""
    S = max(2 * len(lab) + 1 for lab in labels)
    ext = np.full((len(labels), S), blank, dtype=np.int64)
    lengths = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        ext[i, 1:2 * len(lab):2] = lab
        lengths[i] = 2 * len(lab) + 1
    skip = np.zeros_like(ext, dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank) & (ext[:, 2:] != ext[:, :-2])
    return ext, lengths, skip


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return m_safe + np.log(np.exp(a - m_safe) + np.exp(b - m_safe) + np.exp(c - m_safe))


def ctc_forward_backward(lp: np.ndarray, frames: np.ndarray, labels: Sequence[Sequence[int]], blank: int):
    """Log alpha/beta over a padded batch.

    ``lp`` is (B, T, C). Returns (log p(label) per sample, gradient of
    ``-log p`` with respect to ``lp``).
    """
    B, T, C = lp.shape
    ext, S_len, skip = _extend(labels, blank)
    S = ext.shape[1]
    bidx = np.arange(B)[:, None]
    emit = lp[bidx[:, :, None], np.arange(T)[None, :, None], ext[:, None, :]]  # B, T, S
    s_idx = np.arange(S)[None, :]
    valid_s = s_idx < S_len[:, None]

    alpha = np.full((B, T, S), NEG_INF)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1] = np.where(S_len > 1, emit[:, 0, 1], NEG_INF)
    pad1 = np.full((B, 1), NEG_INF)
    pad2 = np.full((B, 2), NEG_INF)
    for t in range(1, T):
        prev = alpha[:, t - 1]
        s1 = np.concatenate([pad1, prev[:, :-1]], axis=1)
        s2 = np.where(skip, np.concatenate([pad2, prev[:, :-2]], axis=1), NEG_INF)
        alpha[:, t] = np.where(valid_s, _lse3(prev, s1, s2) + emit[:, t], NEG_INF)

    beta = np.full((B, T, S), NEG_INF)
    last = frames - 1
    skip_next = np.zeros_like(skip)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(T - 1, -1, -1):
        init = np.full((B, S), NEG_INF)
        init[np.arange(B), S_len - 1] = emit[np.arange(B), t, S_len - 1]
        init[np.arange(B), S_len - 2] = np.where(S_len > 1, emit[np.arange(B), t, S_len - 2], NEG_INF)
        if t < T - 1:
            nxt = beta[:, t + 1]
            n1 = np.concatenate([nxt[:, 1:], pad1], axis=1)
            n2 = np.where(skip_next, np.concatenate([nxt[:, 2:], pad2], axis=1), NEG_INF)
            rec = _lse3(nxt, n1, n2) + emit[:, t]
        else:
            rec = np.full((B, S), NEG_INF)
        is_last = (t == last)[:, None]
        inside = (t < last)[:, None]
        beta[:, t] = np.where(is_last, init, np.where(inside & valid_s, rec, NEG_INF))

    a_end = alpha[np.arange(B), last]
    logp = np.logaddexp(a_end[np.arange(B), S_len - 1],
                        np.where(S_len > 1, a_end[np.arange(B), S_len - 2], NEG_INF))

    with np.errstate(invalid="ignore"):
        occ = alpha + beta - emit - logp[:, None, None]
    occ = np.where(np.isfinite(occ), np.exp(occ), 0.0)
    onehot = np.zeros((B, S, C))
    onehot[np.arange(B)[:, None], np.arange(S)[None, :], ext] = valid_s
    grad = -(occ @ onehot)
    grad[np.arange(T)[None, :] >= frames[:, None]] = 0.0
    return logp, grad


def ctc_loss_batch(log_probs, frames: Sequence[int], labels: Sequence[Sequence[int]], blank: int):
    """Per-sample ``-log p(label | lattice)`` as a (B,) tensor.

    ``log_probs`` is a (B, T, C) tensor of log-softmax outputs; ``frames[i]``
    is the number of valid frames of sample ``i``.
    """
    log_probs = N.as_tensor(log_probs)
    frames = np.asarray(frames, dtype=np.int64)
    for i, (f, lab) in enumerate(zip(frames, labels)):
        if len(lab) == 0:
            raise ValueError(f"sample {i}: empty label")
        if f < min_frames(lab):
            raise InfeasibleAlignmentError(
                f"sample {i}: {f} frames cannot emit a label needing {min_frames(lab)}")
    logp, grad = ctc_forward_backward(log_probs.data, frames, labels, blank)
    if not np.isfinite(logp).all():
        raise InfeasibleAlignmentError("label has zero probability under the lattice")

    def backward(g):
        return [(log_probs, grad * g[:, None, None], None)]

    return N.make_op(-logp, (log_probs,), backward, "ctc_loss")


def ctc_loss(lattice, label: Sequence[int], blank: int | None = None):
    """Scalar CTC loss of one (T', Q+1) lattice; blank defaults to the last column."""
    lattice = N.as_tensor(lattice)
    blank = lattice.shape[-1] - 1 if blank is None else blank
    batched = N.reshape(lattice, (1,) + lattice.shape)
    return N.reshape(ctc_loss_batch(batched, [lattice.shape[0]], [list(label)], blank), ())


def collapse(path: Sequence[int], blank: int) -> list[int]:
    """The CTC map B: merge adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return out


def greedy_decode(lattice, alphabet: Alphabet) -> str:
    lattice = np.asarray(lattice.data if isinstance(lattice, N.Tensor) else lattice)
    return alphabet.decode(collapse(np.argmax(lattice, axis=-1), alphabet.blank_index))


def beam_decode(lattice, alphabet: Alphabet, width: int) -> str:
    """Prefix beam search over label prefixes, marginalizing alignments."""
    if width < 1:
        raise ValueError("beam width must be >= 1")
    lp = np.asarray(lattice.data if isinstance(lattice, N.Tensor) else lattice, dtype=np.float64)
    blank = alphabet.blank_index
    # prefix -> (log p ending in blank, log p ending in non-blank)
    beams: dict[tuple, tuple[float, float]] = {(): (0.0, NEG_INF)}
    for row in lp:
        nxt: dict = defaultdict(lambda: [NEG_INF, NEG_INF])
        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            entry = nxt[prefix]
            entry[0] = np.logaddexp(entry[0], total + row[blank])
            for c in range(alphabet.size):
                p = row[c]
                ext = nxt[prefix + (c,)]
                if prefix and prefix[-1] == c:
                    ext[1] = np.logaddexp(ext[1], pb + p)
                    entry[1] = np.logaddexp(entry[1], pnb + p)
                else:
                    ext[1] = np.logaddexp(ext[1], total + p)
        ranked = sorted(nxt.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))
        beams = {k: tuple(v) for k, v in ranked[:width]}
    best = min(beams.items(), key=lambda kv: (-np.logaddexp(*kv[1]), kv[0]))[0]
    return alphabet.decode(best)

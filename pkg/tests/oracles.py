"""Independent reference implementations used as test oracles."""
import itertools
from functools import lru_cache

import numpy as np


def collapse_path(path, blank):
    out, prev = [], None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


def path_label_probs(probs: np.ndarray) -> dict:
    """Sum the probability of every frame path, grouped by collapsed label."""
    T, C = probs.shape
    blank = C - 1
    totals: dict = {}
    for path in itertools.product(range(C), repeat=T):
        lab = collapse_path(path, blank)
        totals[lab] = totals.get(lab, 0.0) + float(np.prod(probs[np.arange(T), path]))
    return totals


def brute_force_ctc(probs: np.ndarray, label) -> float:
    return path_label_probs(probs).get(tuple(label), 0.0)


def random_lattice(rng, T, C, peaky=1.0):
    logits = rng.normal(size=(T, C)) * peaky
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    return logp


def recursive_edit_distance(a: str, b: str) -> int:
    """Textbook recursive definition, memoized on suffix positions."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1, d(i + 1, j + 1) + (a[i] != b[j]))

    return d(0, 0)


def matrix(rr, rs, sr, ss, br, bs):
    return {"m_rr": rr, "m_rs": rs, "m_sr": sr, "m_ss": ss, "m_br": br, "m_bs": bs}


# Constructed CER matrices with their expected labels at tau = 0.1; m_bs is
# not used by any predicate and is set to a neutral value.
DIAGNOSE_EXAMPLES = {
    "Case1": matrix(rr=0.08, rs=0.28, sr=0.30, ss=0.02, br=0.20, bs=0.05),
    "Case2": matrix(rr=0.08, rs=0.03, sr=0.25, ss=0.02, br=0.08, bs=0.03),
    "Case3": matrix(rr=0.08, rs=0.12, sr=0.06, ss=0.10, br=0.05, bs=0.10),
}

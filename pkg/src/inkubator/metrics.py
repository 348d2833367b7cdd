"""Character error rate, the train-set x eval-set CER matrix, and its diagnosis."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

TRAIN_SETS = ("r", "s", "b")
EVAL_SETS = ("r", "s")
ENTRY_KEYS = tuple(f"m_{t}{v}" for t in TRAIN_SETS for v in EVAL_SETS)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (unit-cost insert, delete, substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def cer(pairs: Iterable[tuple[str, str]]) -> float:
    """Micro-averaged CER over ``(ref, hyp)`` pairs."""
    edits = 0
    total = 0
    for ref, hyp in pairs:
        edits += edit_distance(ref, hyp)
        total += len(ref)
    if total == 0:
        raise ValueError("CER undefined: total reference length is zero")
    return edits / total


@dataclass
class CerMatrix:
    """``m[t][v]``: CER of the model trained on set t, evaluated on set v."""

    m: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for t in TRAIN_SETS:
            for v in EVAL_SETS:
                x = self.m.get(t, {}).get(v)
                if x is None:
                    raise ValueError(f"CER matrix entry {t}{v} missing")
                if x < 0:
                    raise ValueError(f"CER matrix entry {t}{v} negative")

    def __getitem__(self, t: str) -> dict:
        return self.m[t]

    def to_dict(self) -> dict:
        d = {f"m_{t}{v}": self.m[t][v] for t in TRAIN_SETS for v in EVAL_SETS}
        d["meta"] = self.meta
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CerMatrix":
        m = {t: {v: float(d[f"m_{t}{v}"]) for v in EVAL_SETS} for t in TRAIN_SETS}
        return cls(m, dict(d.get("meta", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CerMatrix":
        return cls.from_dict(json.loads(text))

    def scaled(self, k: float) -> "CerMatrix":
        return CerMatrix({t: {v: self.m[t][v] * k for v in EVAL_SETS} for t in TRAIN_SETS}, dict(self.meta))


def build_cer_matrix(models: Mapping[str, Callable], tests: Mapping[str, object],
                     evaluate: Callable[[Callable, object], float], meta: dict | None = None) -> CerMatrix:
    """Evaluate each of the three models on each of the two test sets.

    ``evaluate(model, test)`` returns a CER. ``models`` must have keys r, s, b
    and ``tests`` keys r, s.
    """
    for t in TRAIN_SETS:
        if models.get(t) is None:
            raise ValueError(f"missing model for training set {t!r}")
    for v in EVAL_SETS:
        if tests.get(v) is None:
            raise ValueError(f"missing test set {v!r}")
    m = {t: {v: float(evaluate(models[t], tests[v])) for v in EVAL_SETS} for t in TRAIN_SETS}
    return CerMatrix(m, dict(meta or {}))


@dataclass
class CaseDiagnosis:
    label: str
    evidence: list
    tau: float

    def to_dict(self) -> dict:
        return {"label": self.label, "tau": self.tau, "evidence": list(self.evidence)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def diagnose(matrix: CerMatrix, tau: float = 0.1) -> CaseDiagnosis:
    """Classify synthetic data into Case1/Case2/Case3 or Inconclusive.

    Every predicate is relative to the real-on-real CER, so scaling the whole
    matrix leaves the label unchanged. Case 3 (synthetic data helps) is tested
    first.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    m = matrix.m
    rr = m["r"]["r"]
    lo, hi = (1 - tau) * rr, (1 + tau) * rr
    preds = {
        "min(m_sr, m_br) < (1-tau)*m_rr": min(m["s"]["r"], m["b"]["r"]) < lo,
        "m_ss < (1-tau)*m_rr": m["s"]["s"] < lo,
        "m_sr > (1+tau)*m_rr": m["s"]["r"] > hi,
        "m_rs > (1+tau)*m_rr": m["r"]["s"] > hi,
        "m_rs < (1+tau)*m_rr": m["r"]["s"] < hi,
    }
    p = list(preds.values())
    if p[0]:
        label = "Case3"
    elif p[1] and p[2] and p[3]:
        label = "Case1"
    elif p[1] and p[4] and p[2]:
        label = "Case2"
    else:
        label = "Inconclusive"
    evidence = [f"{name}: {'yes' if ok else 'no'}" for name, ok in preds.items()]
    return CaseDiagnosis(label, evidence, tau)

"""Strict JSON experiment configuration.

Top-level sections: ``toyworld``, ``synth``, ``recognizer``, ``sweep``,
``seeds``. Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..recognizer import RecognizerConfig
from ..synthesizer import SynthConfig
from ..toyworld import ToyConfig

SECTIONS = ("toyworld", "synth", "recognizer", "sweep", "seeds")


class ConfigError(ValueError):
    pass


@dataclass
class SweepConfig:
    biases: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 5.0])
    synth_factor: float = 2.0          # synthetic training count as a multiple of the real count
    synth_rec_epochs: int | None = None  # epochs for the s and b recognizers; None -> recognizer.epochs
    amount_factors: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    tau: float = 0.1
    expand: bool = True
    expand_n_min: int = 40
    eps_z: float = 0.1
    synth_test_factor: float = 1.0     # synthetic test set size relative to the collected test split
    synth_val_count: int = 100         # validation samples used for synthesizer recon NLL
    gallery: int = 4
    workers: int = 1
    tag: str = "sweep"

    def __post_init__(self):
        b = [float(x) for x in self.biases]
        if not b:
            raise ConfigError("sweep.biases must be non-empty")
        if any(x < 0 for x in b):
            raise ConfigError("sweep.biases must be >= 0")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError("sweep.biases must be strictly increasing")
        self.biases = b
        self.amount_factors = [float(x) for x in self.amount_factors]
        if self.synth_factor <= 0 or any(x <= 0 for x in self.amount_factors):
            raise ConfigError("synthetic amounts must be positive")
        if not 0 < self.tau < 1:
            raise ConfigError("sweep.tau must lie in (0, 1)")
        if self.synth_rec_epochs is not None and self.synth_rec_epochs < 1:
            raise ConfigError("sweep.synth_rec_epochs must be >= 1")
        if self.workers < 1:
            raise ConfigError("sweep.workers must be >= 1")


@dataclass
class ExperimentConfig:
    toyworld: ToyConfig = field(default_factory=ToyConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")

    def to_dict(self) -> dict:
        d = {name: asdict(getattr(self, name)) for name in SECTIONS[:-1]}
        d["toyworld"]["collected_clusters"] = list(self.toyworld.collected_clusters)
        d["toyworld"]["excluded_bigrams"] = [list(p) for p in self.toyworld.excluded_bigrams]
        d["seeds"] = list(self.seeds)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _section(cls, raw, name: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {unknown}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name!r} section: {e}") from None


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    seeds = raw.get("seeds", [0, 1, 2])
    if not isinstance(seeds, list):
        raise ConfigError("seeds must be a list")
    return ExperimentConfig(
        toyworld=_section(ToyConfig, raw.get("toyworld"), "toyworld"),
        synth=_section(SynthConfig, raw.get("synth"), "synth"),
        recognizer=_section(RecognizerConfig, raw.get("recognizer"), "recognizer"),
        sweep=_section(SweepConfig, raw.get("sweep"), "sweep"),
        seeds=seeds,
    )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return from_dict(raw)

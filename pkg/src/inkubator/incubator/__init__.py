"""Experiment orchestration: dataset mixing, corpus expansion, bias sweeps, reports, CLI."""
from .config import ConfigError, ExperimentConfig, SweepConfig, from_dict, load_config
from .data import (MixError, bigram_gap_slice, count_bigram, expand_corpus, mix_datasets, source_of,
                   synthesis_texts)
from .pipeline import SweepError, run_sweep, select_bias, verify_manifest
from .report import ReportError, write_report

__all__ = [
    "ConfigError", "ExperimentConfig", "SweepConfig", "from_dict", "load_config",
    "MixError", "bigram_gap_slice", "count_bigram", "expand_corpus", "mix_datasets", "source_of",
    "synthesis_texts", "SweepError", "run_sweep", "select_bias", "verify_manifest",
    "ReportError", "write_report",
]

"""CTC handwriting recognizer: two strided convolutions, two BiLSTM layers, linear."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import ctc, metrics
from . import numerics as N
from .ink import Alphabet, StrokeSample, extract_features, normalize
from .numerics import layers as L

log = logging.getLogger(__name__)

IN_FEATURES = 4


@dataclass
class RecognizerConfig:
    d_r: int = 64
    conv1: int = 32
    conv2: int = 64
    kernel: int = 5
    stride: int = 2
    lr: float = 1e-3
    clip_norm: float = 5.0
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    decode: str = "greedy"

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("convolution kernel must be odd")


class RecognizerError(ValueError):
    pass


def init_params(n_symbols: int, cfg: RecognizerConfig, rng: np.random.Generator) -> dict:
    """``n_symbols`` includes the blank (Q + 1)."""
    p = {}
    k = cfg.kernel
    for name, cin, cout in (("conv1", IN_FEATURES, cfg.conv1), ("conv2", cfg.conv1, cfg.conv2)):
        s = 1.0 / np.sqrt(k * cin)
        p[f"{name}.W"] = N.parameter(rng.uniform(-s, s, size=(k, cin, cout)), f"{name}.W")
        p[f"{name}.b"] = N.parameter(np.zeros(cout), f"{name}.b")
    L.init_bilstm(p, "lstm1", cfg.conv2, cfg.d_r, rng)
    L.init_bilstm(p, "lstm2", 2 * cfg.d_r, cfg.d_r, rng)
    L.init_linear(p, "out", 2 * cfg.d_r, n_symbols, rng)
    return p


def output_length(T: int, stride: int = 2) -> int:
    return -(-(-(-T // stride)) // stride)


def features_of(sample: StrokeSample) -> np.ndarray:
    return extract_features(normalize(sample))


def _pad(feats: Sequence[np.ndarray]):
    T = max(len(f) for f in feats)
    x = np.zeros((len(feats), T, feats[0].shape[1]))
    lengths = np.array([len(f) for f in feats])
    for i, f in enumerate(feats):
        x[i, :len(f)] = f
    return x, lengths


def _mask(lengths: np.ndarray, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < lengths[:, None]


def rec_forward_batch(params: dict, feats: Sequence[np.ndarray], cfg: RecognizerConfig):
    """Log-probabilities (B, T', Q+1) and per-sample valid frame counts."""
    if any(len(f) == 0 for f in feats):
        raise RecognizerError("empty feature sequence")
    x, lengths = _pad(feats)
    h = N.Tensor(x)
    for name in ("conv1", "conv2"):
        h = N.tanh(N.conv1d(h, params[f"{name}.W"], params[f"{name}.b"], stride=cfg.stride))
        lengths = -(-lengths // cfg.stride)
        m = _mask(lengths, h.shape[1])
        if not m.all():
            # zero the padded frames so the next layer sees "same" padding
            h = N.mul(h, m[:, :, None].astype(np.float64))
    m = _mask(lengths, h.shape[1])
    h = L.bilstm(params, "lstm1", h, m)
    h = L.bilstm(params, "lstm2", h, m)
    return N.log_softmax(L.linear(params, "out", h)), lengths


def rec_forward(params: dict, features: np.ndarray, cfg: RecognizerConfig) -> np.ndarray:
    with N.no_grad():
        lp, frames = rec_forward_batch(params, [features], cfg)
    return lp.data[0, :frames[0]]


def batch_loss(params, feats, labels, cfg: RecognizerConfig, blank: int):
    lp, frames = rec_forward_batch(params, feats, cfg)
    losses = ctc.ctc_loss_batch(lp, frames, labels, blank)
    return N.mean(losses)


def decode_lattice(lattice: np.ndarray, alphabet: Alphabet, decode: str) -> str:
    if decode == "greedy":
        return ctc.greedy_decode(lattice, alphabet)
    if decode.startswith("beam:"):
        return ctc.beam_decode(lattice, alphabet, int(decode.split(":", 1)[1]))
    raise ValueError(f"unknown decode mode {decode!r}")


def predict(params: dict, samples: Sequence[StrokeSample], alphabet: Alphabet, cfg: RecognizerConfig,
            decode: str | None = None, batch_size: int = 128) -> list[str]:
    decode = decode or cfg.decode
    feats = [features_of(s) for s in samples]
    order = np.argsort([len(f) for f in feats], kind="stable")
    hyps: list[str] = [""] * len(samples)
    with N.no_grad():
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            lp, frames = rec_forward_batch(params, [feats[i] for i in idx], cfg)
            for row, i in enumerate(idx):
                hyps[i] = decode_lattice(lp.data[row, :frames[row]], alphabet, decode)
    return hyps


def evaluate(params: dict, samples: Sequence[StrokeSample], alphabet: Alphabet, cfg: RecognizerConfig,
             decode: str | None = None):
    """Per-sample predictions ``[{"id", "ref", "hyp"}]`` and the micro CER."""
    hyps = predict(params, samples, alphabet, cfg, decode)
    preds = [{"id": s.id, "ref": s.content, "hyp": h} for s, h in zip(samples, hyps)]
    return preds, metrics.cer((p["ref"], p["hyp"]) for p in preds)


def feasible(sample: StrokeSample, label: Sequence[int], cfg: RecognizerConfig) -> bool:
    T1 = -(-len(sample) // cfg.stride)
    return -(-T1 // cfg.stride) >= ctc.min_frames(label)


def _batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle, sort by length inside pools of 8 batches, then shuffle the batches."""
    perm = rng.permutation(len(lengths))
    pool = batch_size * 8
    batches = []
    for lo in range(0, len(perm), pool):
        chunk = perm[lo:lo + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    skipped: list


def train_rec(train: Sequence[StrokeSample], alphabet: Alphabet, cfg: RecognizerConfig,
              val: Sequence[StrokeSample] | None = None, steps: int | None = None) -> TrainResult:
    """Adam + CTC. Keeps the parameters with the best validation CER.

    ``steps`` overrides ``cfg.epochs`` with a fixed number of updates.
    """
    if not train:
        raise RecognizerError("empty training set")
    feats, labels, skipped = [], [], []
    for s in train:
        lab = alphabet.encode(s.content)
        if not feasible(s, lab, cfg):
            log.warning("skipping %s: %d moves cannot align %d-char label", s.id, len(s), len(lab))
            skipped.append(s.id)
            continue
        feats.append(features_of(s))
        labels.append(lab)
    if not feats:
        raise RecognizerError("every training sample is infeasible for CTC")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(alphabet.size + 1, cfg, rng)
    hyper = N.AdamHyper(lr=cfg.lr, clip_norm=cfg.clip_norm)
    state = N.AdamState()
    lengths = np.array([len(f) for f in feats])
    blank = alphabet.blank_index

    best = (np.inf, -1, None)
    history = []
    done = 0
    epoch = 0
    total_epochs = cfg.epochs if steps is None else None
    while (total_epochs is not None and epoch < total_epochs) or (steps is not None and done < steps):
        losses = []
        for idx in _batches(lengths, cfg.batch_size, rng):
            if steps is not None and done >= steps:
                break
            bf = [feats[i] for i in idx]
            bl = [labels[i] for i in idx]
            loss, grads = N.forward_backward(lambda p: batch_loss(p, bf, bl, cfg, blank), params)
            N.adam_step(params, grads, state, hyper)
            losses.append(loss)
            done += 1
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "steps": done}
        if val:
            _, val_cer = evaluate(params, val, alphabet, cfg)
            entry["val_cer"] = val_cer
            log.info("rec epoch %d loss %.4f val CER %.4f", epoch, entry["train_loss"], val_cer)
            if val_cer < best[0]:
                best = (val_cer, epoch, L.params_to_arrays(params))
        else:
            log.info("rec epoch %d loss %.4f", epoch, entry["train_loss"])
        history.append(entry)
        epoch += 1
    if best[2] is None:
        best = (np.nan, epoch - 1, L.params_to_arrays(params))
    return TrainResult(L.arrays_to_params(best[2]), history, best[1], skipped)


def save(path, params: dict, cfg: RecognizerConfig, alphabet: Alphabet, extra: dict | None = None) -> None:
    meta = {"kind": "recognizer", "config": asdict(cfg), "alphabet": "".join(alphabet.chars)}
    meta.update(extra or {})
    N.checkpoint.save(path, L.params_to_arrays(params), meta)


def load(path):
    arrays, meta = N.checkpoint.load(path)
    if meta.get("kind") != "recognizer":
        raise RecognizerError(f"{path} is not a recognizer checkpoint")
    return L.arrays_to_params(arrays), RecognizerConfig(**meta["config"]), Alphabet(tuple(meta["alphabet"]))

"""Layer building blocks shared by the synthesizer and the recognizer.

Parameters live in flat ``dict[str, Tensor]`` maps with dotted names.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T


def init_linear(params: dict, name: str, n_in: int, n_out: int, rng: np.random.Generator,
                scale: float | None = None, zero: bool = False) -> None:
    if zero:
        w = np.zeros((n_in, n_out))
    else:
        s = scale if scale is not None else 1.0 / np.sqrt(n_in)
        w = rng.uniform(-s, s, size=(n_in, n_out))
    params[f"{name}.W"] = T.parameter(w, f"{name}.W")
    params[f"{name}.b"] = T.parameter(np.zeros(n_out), f"{name}.b")


def linear(params: dict, name: str, x):
    return T.add(T.matmul(x, params[f"{name}.W"]), params[f"{name}.b"])


def init_lstm(params: dict, name: str, n_in: int, hidden: int, rng: np.random.Generator) -> None:
    s = 1.0 / np.sqrt(hidden)
    params[f"{name}.Wx"] = T.parameter(rng.uniform(-s, s, size=(n_in, 4 * hidden)), f"{name}.Wx")
    params[f"{name}.Wh"] = T.parameter(rng.uniform(-s, s, size=(hidden, 4 * hidden)), f"{name}.Wh")
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    params[f"{name}.b"] = T.parameter(b, f"{name}.b")


def lstm_cell(params: dict, name: str, xw, h, c):
    """One step given the precomputed input projection ``xw = x @ Wx + b``."""
    H = h.shape[-1]
    z = T.add(xw, T.matmul(h, params[f"{name}.Wh"]))
    gates = T.sigmoid(z[:, :3 * H])
    g = T.tanh(z[:, 3 * H:])
    i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def lstm_sequence(params: dict, name: str, x, mask: np.ndarray | None = None, reverse: bool = False):
    """Run an LSTM over (batch, time, features); returns (batch, time, hidden).

    ``mask`` (batch, time) marks valid steps; on padded steps the state is
    carried through unchanged and the emitted output is zero, so a padded
    batch matches running each sequence alone.
    """
    B, steps, _ = x.shape
    H = params[f"{name}.Wh"].shape[0]
    xw = T.add(T.matmul(x, params[f"{name}.Wx"]), params[f"{name}.b"])
    hc = T.Tensor(np.zeros((B, 2 * H)))
    outs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        m = None
        if mask is not None and not mask[:, t].all():
            m = mask[:, t:t + 1].astype(np.float64)
        hc = T.lstm_step(xw[:, t], hc, params[f"{name}.Wh"], m)
        outs[t] = hc
    h = T.stack(outs, axis=1)[:, :, :H]
    if mask is not None and not mask.all():
        h = T.mul(h, mask[:, :, None].astype(np.float64))
    return h


def bilstm(params: dict, name: str, x, mask: np.ndarray | None = None):
    fwd = lstm_sequence(params, f"{name}.fw", x, mask)
    bwd = lstm_sequence(params, f"{name}.bw", x, mask, reverse=True)
    return T.concat([fwd, bwd], axis=-1)


def init_bilstm(params: dict, name: str, n_in: int, hidden: int, rng: np.random.Generator) -> None:
    init_lstm(params, f"{name}.fw", n_in, hidden, rng)
    init_lstm(params, f"{name}.bw", n_in, hidden, rng)


def params_to_arrays(params: dict) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def arrays_to_params(arrays: dict[str, np.ndarray]) -> dict:
    return {k: T.parameter(v, k) for k, v in arrays.items()}

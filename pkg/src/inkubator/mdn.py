"""Mixture density output: J bivariate Gaussians over (dx, dy) plus a Bernoulli pen.

A raw parameter vector has length ``6J + 1`` laid out as
``[w_logit(J), mu_x(J), mu_y(J), log_sx(J), log_sy(J), rho_logit(J), pen_logit]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as N

LOG_2PI = float(np.log(2 * np.pi))


def raw_size(n_components: int) -> int:
    return 6 * n_components + 1


def split_raw(raw, J: int):
    """Slice a raw array or tensor into its seven groups along the last axis."""
    return tuple(raw[..., k * J:(k + 1) * J] for k in range(6)) + (raw[..., 6 * J:6 * J + 1],)


@dataclass
class MixtureParams:
    weights: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    rho: np.ndarray
    pen: np.ndarray

    def validate(self) -> "MixtureParams":
        if not np.allclose(self.weights.sum(axis=-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("mixture weights do not sum to 1")
        if (self.sigma_x <= 0).any() or (self.sigma_y <= 0).any():
            raise ValueError("standard deviations must be positive")
        if (np.abs(self.rho) >= 1).any():
            raise ValueError("correlations must lie in (-1, 1)")
        if ((self.pen <= 0) | (self.pen >= 1)).any():
            raise ValueError("pen probability must lie in (0, 1)")
        return self


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activate(raw: np.ndarray, bias: float = 0.0) -> MixtureParams:
    """Map raw outputs to distribution parameters, sharpened by sampling bias.

    ``bias`` scales the weight logits by ``1 + bias`` and the standard
    deviations by ``exp(-bias)``; the pen probability is unaffected.
    """
    if bias < 0:
        raise ValueError(f"sampling bias must be >= 0, got {bias}")
    raw = np.asarray(raw, dtype=np.float64)
    J = (raw.shape[-1] - 1) // 6
    w, mx, my, sx, sy, r, e = split_raw(raw, J)
    return MixtureParams(
        weights=_softmax(w * (1.0 + bias)),
        mu_x=mx.copy(),
        mu_y=my.copy(),
        sigma_x=np.exp(sx - bias),
        sigma_y=np.exp(sy - bias),
        rho=np.tanh(r),
        pen=0.5 * (1.0 + np.tanh(0.5 * e[..., 0])),
    )


def nll(params: MixtureParams, target) -> tuple[float, float]:
    """``(-log p(dx, dy), -log p(u))`` for one step."""
    dx, dy, u = target
    zx = (dx - params.mu_x) / params.sigma_x
    zy = (dy - params.mu_y) / params.sigma_y
    one_m = 1.0 - params.rho ** 2
    log_n = (-LOG_2PI - np.log(params.sigma_x) - np.log(params.sigma_y) - 0.5 * np.log(one_m)
             - (zx * zx + zy * zy - 2 * params.rho * zx * zy) / (2 * one_m))
    a = np.log(params.weights) + log_n
    m = a.max()
    pos = -(m + np.log(np.exp(a - m).sum()))
    pen = -np.log(params.pen if u == 1 else 1.0 - params.pen)
    return float(pos), float(pen)


def nll_tensor(raw, targets: np.ndarray, J: int):
    """Differentiable per-step NLL from raw outputs (training-time, bias 0).

    ``raw`` is a (..., 6J+1) tensor and ``targets`` a (..., 3) array. Returns
    (position_nll, pen_nll) tensors of shape ``raw.shape[:-1]``.
    """
    w, mx, my, sx, sy, r, e = split_raw(raw, J)
    dx = targets[..., 0:1]
    dy = targets[..., 1:2]
    u = targets[..., 2]
    logw = N.log_softmax(w, axis=-1)
    zx = N.mul(N.sub(dx, mx), N.exp(N.neg(sx)))
    zy = N.mul(N.sub(dy, my), N.exp(N.neg(sy)))
    rho = N.tanh(r)
    # log(1 - tanh(r)^2) = log 4 - 2r - 2 softplus(-2r), stable for large |r|
    log_one_m = N.sub(N.sub(np.log(4.0), N.mul(2.0, r)), N.mul(2.0, N.softplus(N.mul(-2.0, r))))
    quad = N.sub(N.add(N.square(zx), N.square(zy)), N.mul(N.mul(2.0, rho), N.mul(zx, zy)))
    log_n = N.sub(N.sub(N.sub(N.sub(-LOG_2PI, sx), sy), N.mul(0.5, log_one_m)),
                  N.mul(0.5, N.mul(quad, N.exp(N.neg(log_one_m)))))
    pos = N.neg(N.logsumexp(N.add(logw, log_n), axis=-1))
    e0 = e[..., 0]
    pen = N.sub(N.softplus(e0), N.mul(u, e0))
    return pos, pen


def sample(params: MixtureParams, rng: np.random.Generator) -> tuple[float, float, int]:
    """Draw one ``(dx, dy, u)``; consumes exactly four uniforms/normals from ``rng``."""
    u_comp = rng.random()
    z = rng.standard_normal(2)
    u_pen = rng.random()
    dx, dy, pen = sample_from_noise(params, np.array([u_comp]), z[None, :], np.array([u_pen]),
                                    batched=False)
    return float(dx[0]), float(dy[0]), int(pen[0])


def sample_from_noise(params: MixtureParams, u_comp: np.ndarray, normals: np.ndarray, u_pen: np.ndarray,
                      batched: bool = True):
    """Vectorized sampling from pre-drawn noise; rows are independent samples.

    The component is chosen by inverse CDF of the weights; the offset is
    ``mu + L z`` with ``L`` the Cholesky factor of the component covariance.
    """
    w = params.weights.reshape(-1, params.weights.shape[-1])
    cdf = np.cumsum(w, axis=-1)
    k = np.minimum((cdf < u_comp[:, None] * cdf[:, -1:]).sum(axis=-1), w.shape[1] - 1)
    rows = np.arange(w.shape[0])

    def pick(a):
        return a.reshape(w.shape)[rows, k]

    sx, sy, rho = pick(params.sigma_x), pick(params.sigma_y), pick(params.rho)
    z1, z2 = normals[:, 0], normals[:, 1]
    dx = pick(params.mu_x) + sx * z1
    dy = pick(params.mu_y) + sy * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)
    pen = (u_pen < params.pen.reshape(-1)).astype(np.int64)
    return dx, dy, pen


def entropy(weights: np.ndarray) -> float:
    w = weights[weights > 0]
    return float(-(w * np.log(w)).sum())

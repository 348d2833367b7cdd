from __future__ import annotations

from typing import Callable

import numpy as np


def grad_check(fn: Callable, point, eps: float = 1e-5) -> float:
    """Max elementwise relative error of the autodiff gradient of ``fn`` at ``point``.

    ``fn`` maps a `Tensor` to a scalar `Tensor`. The reference is the central
    difference with step ``eps``; the relative error uses a
    ``max(|a|, |b|, 1e-8)`` denominator. Non-smooth points are not special
    cased: the (large) error is returned and the caller decides.
    """
    from .tensor import Tensor, backward, no_grad

    x = np.array(point, dtype=np.float64, copy=True)
    xt = Tensor(x.copy(), requires_grad=True)
    backward(fn(xt), [xt])
    analytic = xt.grad.reshape(-1)
    flat = x.reshape(-1)
    num = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(Tensor(x.copy())).data)
            flat[i] = orig - eps
            fm = float(fn(Tensor(x.copy())).data)
            flat[i] = orig
            num[i] = (fp - fm) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(num)), 1e-8)
    return float(np.max(np.abs(analytic - num) / denom))


def check_tensor_grads(loss_fn, params: dict, eps: float = 1e-6, max_entries: int | None = None,
                       rng: np.random.Generator | None = None, floor: float = 1e-8) -> dict[str, float]:
    """Compare autodiff gradients of ``loss_fn(params)`` with central differences.

    Returns the max relative error per parameter name. With ``max_entries``,
    only that many randomly chosen entries per tensor are probed. ``floor``
    bounds the denominator from below so that entries with near-zero gradient
    are judged on absolute error.
    """
    from .tensor import forward_backward, no_grad

    _, grads = forward_backward(loss_fn, params)
    errors = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        worst = 0.0
        g = grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = float(loss_fn(params).data)
                flat[i] = orig - eps
                fm = float(loss_fn(params).data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(num - g[i]) / max(abs(num), abs(g[i]), floor)
            worst = max(worst, err)
        errors[name] = worst
    return errors

"""Dense arrays with reverse-mode differentiation.

A `Tensor` wraps a numpy array. Operations on tensors that require gradients
record their parents and a backward closure; `backward` walks the recorded
graph in reverse topological order. The graph is never mutated by a backward
pass, so the same loss node can be differentiated repeatedly.

Backward closures return a list of ``(parent, grad, index)`` triples. ``index``
is ``None`` for a full-shape contribution, or a basic index expression telling
the engine to accumulate into that region of the parent's gradient buffer.
This keeps per-timestep slicing of long sequences cheap.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float64
_GRAD_ENABLED = True


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


def set_default_dtype(dtype) -> None:
    global _DTYPE
    _DTYPE = np.dtype(dtype).type


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=_DTYPE), requires_grad=True, name=name)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Wrap an op result, recording it on the tape when any parent needs grad."""
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ----------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.shape), None), (b, _unbroadcast(g, b.shape), None)]

    return make_op(out, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g):
        return [(a, _unbroadcast(g, a.shape), None), (b, _unbroadcast(-g, b.shape), None)]

    return make_op(out, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape), None),
            (b, _unbroadcast(g * a.data, b.shape), None),
        ]

    return make_op(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        return [
            (a, _unbroadcast(g / b.data, a.shape), None),
            (b, _unbroadcast(-g * out / b.data, b.shape), None),
        ]

    return make_op(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return [(a, -g, None)]

    return make_op(-a.data, (a,), backward, "neg")


def square(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return [(a, 2.0 * a.data * g, None)]

    return make_op(a.data * a.data, (a,), backward, "square")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g):
        return [(a, g * (1.0 - out * out), None)]

    return make_op(out, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form is stable in both tails
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        return [(a, g * out * (1.0 - out), None)]

    return make_op(out, (a,), backward, "sigmoid")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return [(a, g * out, None)]

    return make_op(out, (a,), backward, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return [(a, g / a.data, None)]

    return make_op(out, (a,), backward, "log")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def backward(g):
        return [(a, g * 0.5 * (1.0 + np.tanh(0.5 * a.data)), None)]

    return make_op(out, (a,), backward, "softplus")


def abs_(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        # right derivative at zero
        return [(a, g * np.where(a.data >= 0, 1.0, -1.0), None)]

    return make_op(np.abs(a.data), (a,), backward, "abs")


# ----------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        res = []
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            res.append((a, _unbroadcast(ga, a.shape), None))
        if b.requires_grad:
            if b.ndim == 1:
                gb = (a.data * g[..., None]).reshape(-1, a.shape[-1]).sum(axis=0)
            elif a.ndim == 1:
                gb = np.multiply.outer(a.data, g)
            elif b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            res.append((b, gb, None))
        return res

    return make_op(out, (a, b), backward, "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return [(a, np.broadcast_to(g, a.shape), None)]

    return make_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    s = np.sum(shifted, axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return [(a, gk * shifted / s, None)]

    return make_op(out, (a,), backward, "logsumexp")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data - np.max(a.data, axis=axis, keepdims=True))
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return [(a, out * (g - np.sum(g * out, axis=axis, keepdims=True)), None)]

    return make_op(out, (a,), backward, "softmax")


def log_softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    out = a.data - m - np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True))

    def backward(g):
        return [(a, g - np.exp(out) * np.sum(g, axis=axis, keepdims=True), None)]

    return make_op(out, (a,), backward, "log_softmax")


# ----------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def backward(g):
        return [(a, g.reshape(src), None)]

    return make_op(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))

    def backward(g):
        return [(a, np.transpose(g, inv), None)]

    return make_op(np.transpose(a.data, axes), (a,), backward, "transpose")


def getitem(a, index) -> Tensor:
    """Basic (slice/int) indexing; use `take` for integer-array gathers."""
    a = as_tensor(a)

    def backward(g):
        return [(a, g, index)]

    return make_op(a.data[index], (a,), backward, "slice")


def take(a, indices, axis=0) -> Tensor:
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        buf = np.zeros(a.shape, dtype=g.dtype)
        moved = np.moveaxis(buf, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return [(a, buf, None)]

    return make_op(out, (a,), backward, "take")


def concat(tensors: Sequence, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        res = []
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                res.append((t, g[tuple(sl)], None))
        return res

    return make_op(out, ts, backward, "concat")


def stack(tensors: Sequence, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return [(t, np.take(g, i, axis=axis), None) for i, t in enumerate(ts) if t.requires_grad]

    return make_op(out, ts, backward, "stack")


# ----------------------------------------------------------------------------
# fused layers


def conv1d(x, w, b, stride: int = 1) -> Tensor:
    """Strided 1-D convolution over (batch, time, channels).

    ``w`` has shape (kernel, c_in, c_out). The input is padded with
    ``kernel // 2`` zeros on the left and as many as needed on the right so
    that the output length is ``ceil(T / stride)``.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, T, cin = x.shape
    k, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv1d expects {wcin} input channels, got {cin}")
    t_out = -(-T // stride)
    left = k // 2
    need = (t_out - 1) * stride + k
    right = max(need - left - T, 0)
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[:, j:j + span:stride] for j in range(k)], axis=2)  # B, t_out, k, cin
    flat = cols.reshape(B * t_out, k * cin)
    out = (flat @ w.data.reshape(k * cin, cout)).reshape(B, t_out, cout) + b.data

    def backward(g):
        res = []
        g2 = g.reshape(B * t_out, cout)
        if x.requires_grad:
            dcols = (g2 @ w.data.reshape(k * cin, cout).T).reshape(B, t_out, k, cin)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, j:j + span:stride] += dcols[:, :, j]
            res.append((x, dxp[:, left:left + T], None))
        if w.requires_grad:
            res.append((w, (flat.T @ g2).reshape(k, cin, cout), None))
        if b.requires_grad:
            res.append((b, _unbroadcast(g, b.shape), None))
        return res

    return make_op(out, (x, w, b), backward, "conv1d")


def lstm_step(xw, hc, wh, mask: np.ndarray | None = None) -> Tensor:
    """Fused LSTM cell on the packed state ``hc = [h, c]`` of shape (B, 2H).

    ``xw`` is the precomputed input projection (B, 4H) with gate order
    (input, forget, output, candidate). Rows where ``mask`` (B, 1) is zero
    keep their previous state.
    """
    xw, hc, wh = as_tensor(xw), as_tensor(hc), as_tensor(wh)
    H = wh.shape[0]
    h, c = hc.data[:, :H], hc.data[:, H:]
    z = xw.data + h @ wh.data
    gates = 0.5 * (1.0 + np.tanh(0.5 * z[:, :3 * H]))
    i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
    g = np.tanh(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    out = np.concatenate([h_new, c_new], axis=1)
    if mask is not None:
        out = mask * out + (1.0 - mask) * hc.data

    def backward(gout):
        if mask is not None:
            g_keep = (1.0 - mask) * gout
            gout = mask * gout
        gh, gc = gout[:, :H], gout[:, H:]
        do = gh * tc
        gct = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([gct * g * i * (1.0 - i), gct * c * f * (1.0 - f), do * o * (1.0 - o),
                             gct * i * (1.0 - g * g)], axis=1)
        res = [(xw, dz, None)]
        if hc.requires_grad:
            dhc = np.concatenate([dz @ wh.data.T, gct * f], axis=1)
            if mask is not None:
                dhc += g_keep
            res.append((hc, dhc, None))
        if wh.requires_grad:
            res.append((wh, h.T @ dz, None))
        return res

    return make_op(out, (xw, hc, wh), backward, "lstm_step")


# ----------------------------------------------------------------------------
# backward pass


def topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Leaf gradients are stored on ``.grad`` (overwritten, not accumulated
    across calls) and also returned keyed by ``id(tensor)``.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    order = topological_order(loss)
    if loss.requires_grad:
        grads[id(loss)] = np.ones_like(loss.data)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg, index in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            buf = grads.get(key)
            if index is None:
                if buf is None:
                    grads[key] = np.array(pg, dtype=parent.data.dtype, copy=True)
                else:
                    buf += pg
            else:
                if buf is None:
                    buf = grads[key] = np.zeros(parent.shape, dtype=parent.data.dtype)
                buf[index] += pg
    targets = wrt if wrt is not None else [n for n in order if n._backward is None]
    out = {}
    for t in targets:
        g = grads.get(id(t))
        if g is None:
            g = np.zeros_like(t.data)
        _check_finite(g, "backward")
        t.grad = g
        out[id(t)] = g
    return out


def forward_backward(loss_fn: Callable[[dict], Tensor], params: dict[str, Tensor]):
    """Evaluate ``loss_fn(params)`` and return (loss value, {name: grad})."""
    loss = loss_fn(params)
    g = backward(loss, params.values())
    return float(loss.data), {name: g[id(t)] for name, t in params.items()}

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    default_dtype,
    div,
    exp,
    forward_backward,
    getitem,
    grad_enabled,
    log,
    log_softmax,
    logsumexp,
    lstm_step,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    parameter,
    reshape,
    set_default_dtype,
    sigmoid,
    softmax,
    softplus,
    square,
    stack,
    sub,
    take,
    tanh,
    topological_order,
    transpose,
    tsum,
)
from .gradcheck import check_tensor_grads, grad_check
from .optim import AdamHyper, AdamState, adam_step, clip_by_global_norm
from . import checkpoint

__all__ = [name for name in dir() if not name.startswith("_")]

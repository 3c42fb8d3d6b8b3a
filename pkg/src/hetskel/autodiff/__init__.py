"""Minimal float64 tensor engine with reverse-mode differentiation."""

from .gradcheck import gradient_check, numerical_gradient
from .nn import (
    MLP,
    BatchNorm1d,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    SelfAttention,
    attention,
    batch_norm_1d,
    cross_entropy,
)
from .optim import Adam, OptimizerState, adam_step
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    exp,
    gelu,
    getitem,
    index_select,
    layer_norm,
    leaky_relu,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    parameters_in,
    relu,
    reshape,
    scaled_dot_attention,
    softmax,
    sqrt,
    square,
    stack,
    stop_gradient,
    watch_margins,
    swapaxes,
    take,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]

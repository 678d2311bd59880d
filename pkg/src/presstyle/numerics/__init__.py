"""Small dense-tensor library: kernels, reverse-mode gradients, Adam."""
from . import backend
from .adam import AdamState, adam_step
from .functional import (
    BatchNormState,
    PoolRecord,
    batch_norm,
    concat,
    content_loss,
    conv2d,
    conv2d_transpose,
    cross_entropy,
    dense,
    flatten,
    max_pool2d,
    max_unpool2d,
    relu,
    softmax,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .serialize import dumps_params, load_params, loads_params, save_params
from .tensor import OpGraph, Tensor, backward

__all__ = [
    "AdamState",
    "BatchNormState",
    "OpGraph",
    "PoolRecord",
    "Tensor",
    "adam_step",
    "backend",
    "backward",
    "batch_norm",
    "check_gradients",
    "concat",
    "content_loss",
    "conv2d",
    "conv2d_transpose",
    "cross_entropy",
    "dense",
    "dumps_params",
    "flatten",
    "load_params",
    "loads_params",
    "max_pool2d",
    "max_unpool2d",
    "numerical_grad",
    "relative_error",
    "relu",
    "save_params",
    "softmax",
]

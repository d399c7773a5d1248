"""Minimal differentiable core: tensors, layer primitives, Adam, weights I/O."""
from .kernels import NUMBA_ENABLED, backend_name
from .ops import (
    BCE_EPS,
    avg_pool2d,
    binary_cross_entropy,
    concat,
    conv2d,
    dense,
    dropout,
    flatten,
    l2_normalize,
    leaky_relu,
    max_pool2d,
    sigmoid,
    softmax_cross_entropy,
    square,
    sum_per_sample,
    upsample_nearest2d,
)
from .optim import Adam, adam_step
from .serialize import CheckpointError, load_weights, save_weights
from .tensor import ParamStore, Tensor, as_tensor

__all__ = [
    "Adam",
    "BCE_EPS",
    "CheckpointError",
    "NUMBA_ENABLED",
    "ParamStore",
    "Tensor",
    "adam_step",
    "as_tensor",
    "avg_pool2d",
    "backend_name",
    "binary_cross_entropy",
    "concat",
    "conv2d",
    "dense",
    "dropout",
    "flatten",
    "l2_normalize",
    "leaky_relu",
    "load_weights",
    "max_pool2d",
    "save_weights",
    "sigmoid",
    "softmax_cross_entropy",
    "square",
    "sum_per_sample",
    "upsample_nearest2d",
]

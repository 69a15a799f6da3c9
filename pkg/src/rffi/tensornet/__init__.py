"""Minimal reverse-mode differentiation engine and neural-network layers."""

from rffi.tensornet.functional import (
    DimensionMismatchError,
    conv2d,
    dense,
    flatten,
    global_average_pool1d,
    global_average_pool2d,
    layer_norm,
    max_pool2d,
    sinusoidal_position_encoding,
    softmax_cross_entropy,
)
from rffi.tensornet.gradcheck import GradCheckReport, grad_check
from rffi.tensornet.layers import (
    GRU,
    LSTM,
    Conv2D,
    Dense,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
    Parameter,
)
from rffi.tensornet.optim import TrainState, adam_step, scheduler_update
from rffi.tensornet.tensor import Tensor, no_grad, relu, sigmoid, softmax, tanh

__all__ = [
    "GRU",
    "LSTM",
    "Conv2D",
    "Dense",
    "DimensionMismatchError",
    "FeedForward",
    "GradCheckReport",
    "LayerNorm",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "Tensor",
    "TrainState",
    "adam_step",
    "conv2d",
    "dense",
    "flatten",
    "global_average_pool1d",
    "global_average_pool2d",
    "grad_check",
    "layer_norm",
    "max_pool2d",
    "no_grad",
    "relu",
    "scheduler_update",
    "sigmoid",
    "sinusoidal_position_encoding",
    "softmax",
    "softmax_cross_entropy",
    "tanh",
]

from .tensor import (
    Tensor,
    EngineConfig,
    config,
    set_float_width,
    default_dtype,
    no_grad,
    is_grad_enabled,
)
from .functional import conv2d, conv_transpose2d, batch_norm, lstm_cell, linear
from .optim import AdamState, adam_step, Adam

__all__ = [
    "Tensor",
    "EngineConfig",
    "config",
    "set_float_width",
    "default_dtype",
    "no_grad",
    "is_grad_enabled",
    "conv2d",
    "conv_transpose2d",
    "batch_norm",
    "lstm_cell",
    "linear",
    "AdamState",
    "adam_step",
    "Adam",
]

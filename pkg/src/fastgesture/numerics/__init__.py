"""Minimal float64 tensor kernel: autodiff primitives, losses, optimizers."""

from . import autodiff as F
from .autodiff import (
    SELU_ALPHA,
    SELU_SCALE,
    NumericalError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    group_norm,
    huber_loss,
    parameter,
    selu,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import AdamW, Ema, adamw_step, ema_update

__all__ = [
    "F",
    "SELU_ALPHA",
    "SELU_SCALE",
    "AdamW",
    "Ema",
    "NumericalError",
    "Tape",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "backward",
    "check_gradients",
    "ema_update",
    "group_norm",
    "huber_loss",
    "numerical_grad",
    "parameter",
    "relative_error",
    "selu",
]

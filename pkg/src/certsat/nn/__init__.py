"""Minimal float64 differentiable substrate: tape autodiff, layers, Adam."""

from .autodiff import ShapeMismatch, Tape, Tensor
from .gradcheck import GradCheckReport, grad_check
from .params import (
    ParameterStore,
    adam_step,
    clip_gradients,
    global_norm,
    load_checkpoint,
    lr_schedule,
    lstm_cell_step,
    mlp_forward,
    save_checkpoint,
)

__all__ = [
    "GradCheckReport", "ParameterStore", "ShapeMismatch", "Tape", "Tensor", "adam_step",
    "clip_gradients", "global_norm", "grad_check", "load_checkpoint", "lr_schedule",
    "lstm_cell_step", "mlp_forward", "save_checkpoint",
]

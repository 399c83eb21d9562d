"""Minimal dense tensor engine: tape-based reverse-mode autodiff plus Adam."""

from . import ops
from .adam import AdamHyper, AdamState, adam_step
from .gradcheck import check_gradients, numeric_grad, rel_error
from .tensor import (
    DegenerateAttentionError,
    NonFiniteError,
    OpRecord,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    backward,
)

__all__ = [
    "ops", "AdamHyper", "AdamState", "adam_step", "check_gradients", "numeric_grad",
    "rel_error", "DegenerateAttentionError", "NonFiniteError", "OpRecord", "ShapeError",
    "Tape", "Tensor", "active_tape", "backward",
]

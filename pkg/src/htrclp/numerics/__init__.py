"""Dense tensors with reverse-mode differentiation for the recognizer."""
from . import ops
from .gradcheck import numeric_grad, relative_error
from .optim import Adam, adam_step, clip_by_global_norm, sgd_step
from .tensor import NonFiniteError, ShapeError, Tape, Tensor, check_finite, no_grad

__all__ = [
    "Adam", "NonFiniteError", "ShapeError", "Tape", "Tensor", "adam_step", "check_finite",
    "clip_by_global_norm", "no_grad", "numeric_grad", "ops", "relative_error", "sgd_step",
]

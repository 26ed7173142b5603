"""dualstream: partially-supervised multi-label screening under domain shift.

A small research codebase built on its own reverse-mode autodiff engine.
The model runs two forward streams over a shared encoder: a deterministic
one that carries the supervised loss and inference, and a perturbed one
that injects feature-statistics uncertainty and is pulled back toward the
deterministic stream by distillation and consistency losses.
"""

from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DomainError,
    DualstreamError,
    GradCheckError,
    NoSupervisionError,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "DualstreamError",
    "ShapeError",
    "DomainError",
    "NonFiniteError",
    "NoSupervisionError",
    "ConfigError",
    "CheckpointError",
    "DataFormatError",
    "NonDeterministicError",
    "GradCheckError",
    "__version__",
]

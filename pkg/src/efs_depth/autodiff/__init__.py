"""Minimal dense-tensor engine with reverse-mode differentiation."""
from . import ops
from .gradcheck import grad_check
from .nn import Conv2d, LayerNorm, Module
from .ops import inject_fault
from .optim import Adam, OptimizerState, adam_update
from .tensor import ShapeError, Tensor

__all__ = [
    "Adam", "Conv2d", "LayerNorm", "Module", "OptimizerState", "ShapeError", "Tensor",
    "adam_update", "grad_check", "inject_fault", "ops",
]

"""Dense float64 arithmetic, log-space helpers and reverse-mode differentiation."""
from . import autodiff as ad
from .autodiff import (
    PRIMITIVES,
    Parameter,
    Tensor,
    UnregisteredPrimitiveError,
    finite_diff,
    grad,
    make_node,
    no_grad,
    register_primitive,
)
from .logspace import LOG_ZERO, log_add, log_softmax, log_sum_exp, softmax

__all__ = [
    "ad", "PRIMITIVES", "Parameter", "Tensor", "UnregisteredPrimitiveError", "finite_diff",
    "grad", "make_node", "no_grad", "register_primitive", "LOG_ZERO", "log_add",
    "log_softmax", "log_sum_exp", "softmax",
]

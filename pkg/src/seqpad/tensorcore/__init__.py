"""Small reverse-mode autodiff library over numpy arrays."""

from . import ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import Adam, AdamState, NonFiniteGradient, adam_step
from .tensor import DEFAULT_DTYPE, GraphError, Tensor, as_tensor, backward

__all__ = [
    "Adam", "AdamState", "DEFAULT_DTYPE", "GraphError", "NonFiniteGradient", "Tensor",
    "adam_step", "as_tensor", "backward", "check_gradients", "numeric_grad", "ops",
    "relative_error",
]

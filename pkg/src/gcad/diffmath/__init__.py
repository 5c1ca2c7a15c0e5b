"""Dense autodiff, Adam, and gradient checking."""

from gcad.diffmath import tensor as ops
from gcad.diffmath.adam import AdamState, adam_step
from gcad.diffmath.gradcheck import grad_check
from gcad.diffmath.tensor import Node, backward, const, param

__all__ = ["AdamState", "Node", "adam_step", "backward", "const", "grad_check", "ops", "param"]

"""Tensor substrate: float64 arrays, reverse-mode tape, gradient checking."""

from .gradcheck import gradcheck, gradcheck_many
from .tensor import GradTape, Tensor, backward, grad_enabled, no_grad
from . import ops

__all__ = [
    "GradTape",
    "Tensor",
    "backward",
    "grad_enabled",
    "gradcheck",
    "gradcheck_many",
    "no_grad",
    "ops",
]

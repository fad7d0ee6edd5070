"""Minimal reverse-mode engine: tensors, layers, decompositions, optimizer,
gradient checker, and the checkpoint container."""

from .tensor import Tensor, concat, no_grad, stack_rows, take
from .ops import (
    adaptive_max_pool1d,
    batch_norm,
    conv1d,
    dropout,
    linear,
    logsumexp,
    softmax,
)
from .linalg import SvdResult, nuclear_norm, svd, sym_inv_sqrt
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, adam_update
from .checkpoint import load_arrays, save_arrays

__all__ = [
    "Tensor",
    "concat",
    "no_grad",
    "stack_rows",
    "take",
    "adaptive_max_pool1d",
    "batch_norm",
    "conv1d",
    "dropout",
    "linear",
    "logsumexp",
    "softmax",
    "SvdResult",
    "nuclear_norm",
    "svd",
    "sym_inv_sqrt",
    "GradCheckReport",
    "grad_check",
    "Adam",
    "adam_update",
    "load_arrays",
    "save_arrays",
]

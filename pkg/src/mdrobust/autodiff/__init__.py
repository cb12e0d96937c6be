"""Reverse-mode automatic differentiation over float64 numpy arrays."""
from . import checkpoint
from .ops import (
    add,
    conv2d,
    dense,
    flatten,
    leaky_relu,
    max_pool2d,
    mean,
    mul,
    reshape,
    softmax,
    softmax_cross_entropy,
    tsum,
)
from .optim import Adam, AdamState, adam_step, glorot_uniform
from .tensor import ContractError, DimensionError, Node, Tape, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "ContractError",
    "DimensionError",
    "Node",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "checkpoint",
    "conv2d",
    "dense",
    "flatten",
    "glorot_uniform",
    "leaky_relu",
    "max_pool2d",
    "mean",
    "mul",
    "reshape",
    "softmax",
    "softmax_cross_entropy",
    "tsum",
]

"""Density-map object counting with decomposed, recalibrated uncertainty."""

from .tensor import Tensor, conv2d, maxpool2
from .optim import Adam, zero_grads

__all__ = [
    "Tensor",
    "conv2d",
    "maxpool2",
    "Adam",
    "zero_grads",
]

__version__ = "0.1.0"

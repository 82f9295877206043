"""Reverse-mode autodiff core and the FCN encoder."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .kernels import BACKEND
from .layers import (
    BatchNorm1d,
    Classifier,
    Conv1d,
    FcnEncoder,
    Linear,
    Module,
    RpHead,
    SoftmaxHead,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "Adam", "AdamState", "BACKEND", "BatchNorm1d", "Classifier", "Conv1d", "FcnEncoder",
    "Linear", "Module", "Parameter", "RpHead", "SoftmaxHead", "Tensor", "adam_step",
    "functional", "load_checkpoint", "no_grad", "save_checkpoint",
]

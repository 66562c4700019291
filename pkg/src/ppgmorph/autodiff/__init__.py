"""Small reverse-mode autodiff engine over numpy arrays."""

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck
from .nn import BatchNorm1d, Conv1d, Dropout, Linear, MaxPool1d, Module, Parameter, ReLU, Sequential
from .optim import Adam, adam_step
from .tensor import Tensor, concat, no_grad, stack

__all__ = [
    "Adam", "BatchNorm1d", "Conv1d", "Dropout", "Linear", "MaxPool1d", "Module", "Parameter",
    "ReLU", "Sequential", "Tensor", "adam_step", "concat", "functional", "gradcheck",
    "load_checkpoint", "no_grad", "save_checkpoint", "stack",
]

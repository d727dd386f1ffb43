"""Reverse-mode autodiff kernel: tensors, layer ops, Adam, checkpoints."""

from .checkpoint import load_checkpoint, restore_checkpoint, save_checkpoint
from .ops import (batchnorm, conv2d, dense, dropout, he_uniform, leaky_relu,
                  mse, relu, sigmoid, sumpool, tconv2d)
from .optim import Adam, ParamStore, adam_init, adam_step
from .tensor import Tensor, all_finite, as_tensor, grad_enabled, no_grad

__all__ = [
    "Adam", "ParamStore", "Tensor",
    "adam_init", "adam_step", "all_finite", "as_tensor",
    "batchnorm", "conv2d", "dense", "dropout",
    "grad_enabled", "he_uniform", "leaky_relu", "load_checkpoint",
    "mse", "no_grad", "relu", "restore_checkpoint", "save_checkpoint",
    "sigmoid", "sumpool", "tconv2d",
]

"""Minimal deterministic differentiable-operator kernel."""

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .layers import Conv2d, ConvTranspose2d, PartialConv2d, Spade
from .optim import ParamStore, adam_step

__all__ = [
    "ops",
    "Conv2d",
    "ConvTranspose2d",
    "PartialConv2d",
    "Spade",
    "ParamStore",
    "adam_step",
    "grad_check",
    "save_checkpoint",
    "load_checkpoint",
]

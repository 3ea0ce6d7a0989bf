"""Deterministic differentiable numerics: arrays, tape autodiff, MLPs, Adam."""
from . import autodiff as ad
from .autodiff import Tape, GradTape, Var, backward, fd_gradient, value_and_grad
from .mlp import MlpSpec, init_mlp, mlp_forward
from .optim import AdamHyper, AdamState, adam_step, clip_by_global_norm
from .tensor import DimensionError, NonFiniteError, ParamStore, tensor

__all__ = [
    "ad", "Tape", "GradTape", "Var", "backward", "fd_gradient", "value_and_grad",
    "MlpSpec", "init_mlp", "mlp_forward",
    "AdamHyper", "AdamState", "adam_step", "clip_by_global_norm",
    "DimensionError", "NonFiniteError", "ParamStore", "tensor",
]

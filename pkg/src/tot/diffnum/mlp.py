"""Multi-layer perceptrons, optionally stacked into independent groups.

A grouped MLP holds `groups` networks with identical layer sizes in one set
of weight arrays of shape (groups, fan_in, fan_out).  Group g only ever sees
input slot g, so cross-group partial derivatives are structurally zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .tensor import DimensionError, ParamStore, check_last_dim


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    # one entry per affine layer: a LeakyReLU slope, or None for identity
    activations: tuple[float | None, ...]
    seed: int = 0
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_sizes) < 2:
            raise ValueError("an MLP needs at least one layer (two sizes)")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a is not None and not 0.0 < a <= 1.0:
                raise ValueError(f"LeakyReLU slope must lie in (0, 1], got {a}")
        if min(self.layer_sizes) < 1 or self.groups < 1:
            raise ValueError("layer sizes and groups must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_size(self) -> int:
        return self.layer_sizes[-1]

    @classmethod
    def simple(cls, n_in: int, hidden: tuple[int, ...] | list[int], n_out: int,
               slope: float = 0.2, seed: int = 0, groups: int = 1) -> "MlpSpec":
        """Hidden layers use LeakyReLU(slope); the output layer is linear."""
        sizes = (n_in, *hidden, n_out)
        acts = (slope,) * len(hidden) + (None,)
        return cls(sizes, acts, seed, groups)


def init_mlp(spec: MlpSpec, prefix: str = "") -> ParamStore:
    """Fan-in scaled uniform initialization, a pure function of spec.seed."""
    rng = np.random.default_rng(spec.seed)
    params = ParamStore()
    for k in range(spec.n_layers):
        fan_in, fan_out = spec.layer_sizes[k], spec.layer_sizes[k + 1]
        bound = 1.0 / np.sqrt(fan_in)
        shape_w = (fan_in, fan_out) if spec.groups == 1 else (spec.groups, fan_in, fan_out)
        shape_b = (fan_out,) if spec.groups == 1 else (spec.groups, fan_out)
        params.add(f"{prefix}w{k}", rng.uniform(-bound, bound, size=shape_w))
        params.add(f"{prefix}b{k}", rng.uniform(-bound, bound, size=shape_b))
    return params


def mlp_forward(spec: MlpSpec, params, x, prefix: str = "", tangent=None):
    """Evaluate the network on `x` (last axis = features).

    Grouped networks take `x` of shape (..., groups, in).  When `tangent` is
    given (shape (..., d, in), or (..., groups, d, in) for grouped nets) the
    directional derivatives are pushed forward alongside the values and
    ``(y, dy)`` is returned.  Works on numpy arrays and on tape variables.
    """
    check_last_dim(ad.value_of(x), spec.in_size)
    if spec.groups > 1 and ad.value_of(x).shape[-2] != spec.groups:
        raise DimensionError(f"grouped input needs axis -2 of size {spec.groups}")
    h, dh = x, tangent
    for k in range(spec.n_layers):
        w, b = params[f"{prefix}w{k}"], params[f"{prefix}b{k}"]
        if spec.groups == 1:
            a = ad.matmul(h, w) + b
            if dh is not None:
                dh = ad.matmul(dh, w)
        else:
            a = _group_affine(h, w) + b
            if dh is not None:
                dh = _group_tangent(dh, w)
        slope = spec.activations[k]
        if slope is not None:
            if dh is not None:
                mask = ad.leaky_relu_grad(a, slope)
                dh = dh * mask[..., None, :]
            h = ad.leaky_relu(a, slope)
        else:
            h = a
    return h if tangent is None else (h, dh)


def _group_affine(h, w):
    hv = ad.value_of(h)
    lead = hv.shape[:-2]
    g, i = hv.shape[-2:]
    h2 = ad.reshape(h, (-1, g, i))
    out = ad.einsum("bgi,gio->bgo", h2, w)
    return ad.reshape(out, (*lead, g, ad.value_of(w).shape[-1]))


def _group_tangent(dh, w):
    dv = ad.value_of(dh)
    lead = dv.shape[:-3]
    g, d, i = dv.shape[-3:]
    d2 = ad.reshape(dh, (-1, g, d, i))
    out = ad.einsum("bgdi,gio->bgdo", d2, w)
    return ad.reshape(out, (*lead, g, d, ad.value_of(w).shape[-1]))

"""Adam with optional global-norm clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ParamStore


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: ParamStore = field(default_factory=ParamStore)
    v: ParamStore = field(default_factory=ParamStore)

    @classmethod
    def zeros(cls, params: ParamStore) -> "AdamState":
        return cls(0, params.zeros_like(), params.zeros_like())

    def copy(self) -> "AdamState":
        return AdamState(self.step, self.m.copy(), self.v.copy())


def clip_by_global_norm(grads: ParamStore, max_norm: float | None) -> tuple[ParamStore, float]:
    """Scale gradients down so their joint L2 norm is at most `max_norm`."""
    norm = grads.global_norm()
    if max_norm is None or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return ParamStore((k, g * scale) for k, g in grads.items()), norm


def adam_step(params: ParamStore, grads: ParamStore, state: AdamState,
              hyper: AdamHyper = AdamHyper()) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    if state.step < 0:
        raise ValueError("step counter must be non-negative")
    params.assert_same_layout(grads)
    if not state.m:
        state = AdamState.zeros(params)
    params.assert_same_layout(state.m)
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = ParamStore(), ParamStore(), ParamStore()
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(t, new_m, new_v)

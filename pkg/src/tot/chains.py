"""Finite-state latent/observed Markov chains used for exact enumeration.

State at time t is the pair (z_t, x_t).  The latent moves first and the
observation then moves conditionally on the new latent:

    p(z', x' | z, x) = P_z[z, z'] * P_x[z', x, x']

`P_x` is stored as k slices of m x m row-stochastic matrices,
``P_x[z, x_prev, x_next]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

STOCHASTIC_TOL = 1e-12


class NonErgodicError(ValueError):
    """The chain has no unique stationary distribution."""


@dataclass
class DiscreteLatentChain:
    P_z: np.ndarray
    P_x: np.ndarray
    x_values: np.ndarray | None = None

    def __post_init__(self):
        self.P_z = np.asarray(self.P_z, dtype=np.float64)
        self.P_x = np.asarray(self.P_x, dtype=np.float64)
        k, m = self.P_z.shape[0], self.P_x.shape[-1]
        if self.P_z.shape != (k, k):
            raise ValueError(f"P_z must be square, got {self.P_z.shape}")
        if self.P_x.shape != (k, m, m):
            raise ValueError(f"P_x must have shape (k, m, m) = {(k, m, m)}, got {self.P_x.shape}")
        for name, arr in (("P_z", self.P_z), ("P_x", self.P_x)):
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            if np.max(np.abs(arr.sum(axis=-1) - 1.0)) > STOCHASTIC_TOL:
                raise ValueError(f"{name} rows must sum to 1")
        if self.x_values is None:
            self.x_values = np.arange(m, dtype=np.float64)
        self.x_values = np.asarray(self.x_values, dtype=np.float64)
        if self.x_values.shape != (m,):
            raise ValueError("x_values must have one entry per observed state")

    @property
    def k(self) -> int:
        return self.P_z.shape[0]

    @property
    def m(self) -> int:
        return self.P_x.shape[-1]

    @classmethod
    def random(cls, k: int, m: int, rng, concentration: float = 1.0,
               floor: float = 0.0) -> "DiscreteLatentChain":
        """Dirichlet rows; `floor` mixes in a uniform component to bound entries away from 0."""
        P_z = rng.dirichlet(np.full(k, concentration), size=k)
        P_x = rng.dirichlet(np.full(m, concentration), size=(k, m))
        if floor > 0:
            P_z = (1 - floor) * P_z + floor / k
            P_x = (1 - floor) * P_x + floor / m
        return cls(P_z, P_x)

    def joint_transition(self) -> np.ndarray:
        """(k*m) x (k*m) transition matrix; state (z, x) has index z*m + x."""
        k, m = self.k, self.m
        T = np.einsum("ab,bxy->axby", self.P_z, self.P_x)
        return T.reshape(k * m, k * m)

    def stationary(self) -> np.ndarray:
        """Stationary distribution over (z, x) as a k x m array."""
        T = self.joint_transition()
        vals, vecs = np.linalg.eig(T.T)
        near_one = np.abs(vals - 1.0) < 1e-9
        if near_one.sum() != 1:
            raise NonErgodicError(f"stationary distribution is not unique ({near_one.sum()} unit eigenvalues)")
        v = np.real(vecs[:, np.argmax(near_one)])
        v = v / v.sum()
        if np.any(v < -1e-12):
            raise NonErgodicError("stationary vector has negative mass")
        return np.clip(v, 0.0, None).reshape(self.k, self.m)

    def next_obs_kernel(self) -> np.ndarray:
        """K[x, z, x'] = p(x_{t+1} = x' | x_t = x, z_t = z)."""
        return np.einsum("ab,bxy->xay", self.P_z, self.P_x)

    def to_dict(self) -> dict:
        return {"k": self.k, "m": self.m,
                "P_z": self.P_z.reshape(-1).tolist(),
                "P_x": self.P_x.reshape(-1).tolist(),
                "x_values": self.x_values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteLatentChain":
        k, m = int(d["k"]), int(d["m"])
        P_z = np.asarray(d["P_z"], dtype=np.float64).reshape(k, k)
        P_x = np.asarray(d["P_x"], dtype=np.float64).reshape(k, m, m)
        return cls(P_z, P_x, d.get("x_values"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "DiscreteLatentChain":
        return cls.from_dict(json.loads(text))

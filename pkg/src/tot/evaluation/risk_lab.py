"""Exact Bayes risks for one-step forecasting on a discrete latent chain.

Three information sets are compared for predicting x_{t+1}:

    o     : the observed history h = (x_{t-1}, x_t)
    z     : h together with the true latent z_t
    zhat  : h together with an estimate of z_t produced by a channel

Every risk is E[Var(x_{t+1} | info)], the squared-error risk of the optimal
predictor E[x_{t+1} | info].  All expectations are exact sums over the
stationary joint distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..chains import DiscreteLatentChain

CHANNELS = ("identity", "bijection", "noisy", "independent")


@dataclass
class RiskReport:
    r_o: float
    r_z: float
    r_zhat: float
    cross_term: float
    decomposition_residual: float
    channel: str

    def to_dict(self) -> dict:
        return {"channel": self.channel, "r_o": self.r_o, "r_z": self.r_z, "r_zhat": self.r_zhat,
                "cross_term": self.cross_term, "decomposition_residual": self.decomposition_residual}


def channel_matrix(kind: str, k: int, p_flip: float = 0.2, perm=None, rng=None) -> np.ndarray:
    """Row-stochastic C[z, zhat] = p(zhat | z)."""
    if kind == "identity":
        return np.eye(k)
    if kind == "bijection":
        if perm is None:
            perm = (rng or np.random.default_rng(0)).permutation(k)
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(k)):
            raise ValueError("bijection channel needs a permutation of the latent states")
        return np.eye(k)[perm]
    if kind == "noisy":
        if not 0.0 <= p_flip <= 1.0:
            raise ValueError("p_flip must lie in [0, 1]")
        if k == 1:
            return np.ones((1, 1))
        return (1 - p_flip) * np.eye(k) + p_flip / (k - 1) * (1 - np.eye(k))
    if kind == "independent":
        return np.full((k, k), 1.0 / k)
    raise ValueError(f"unknown channel {kind!r}; choose from {', '.join(CHANNELS)}")


def _expected_var(weights: np.ndarray, mean: np.ndarray, second: np.ndarray, axis) -> float:
    """sum over info cells of p(cell) * Var(x_{t+1} | cell).

    `weights` are joint probabilities p(cell, fine), `mean`/`second` the
    conditional moments on the fine cells; `axis` lists the fine axes that the
    information set integrates out.
    """
    p = weights.sum(axis=axis)
    m1 = (weights * mean).sum(axis=axis)
    m2 = (weights * second).sum(axis=axis)
    safe = np.where(p > 0, p, 1.0)
    var = np.where(p > 0, m2 - m1 * m1 / safe, 0.0)
    return float(var.sum())


def risk_lab(chain: DiscreteLatentChain, channel: str = "identity", p_flip: float = 0.2,
             perm=None, rng=None) -> RiskReport:
    pi = chain.stationary()  # pi[z, x]
    v = chain.x_values
    K = chain.next_obs_kernel()  # K[x, z, x']
    mu = K @ v  # mu[x_t, z_t]
    s2 = K @ (v * v)
    # joint over (x_{t-1}, z_t, x_t):  sum_{z_{t-1}} pi(z_{t-1}, x_{t-1}) P_z P_x
    joint = np.einsum("ab,ac,cbd->bcd", pi, chain.P_z, chain.P_x)
    mean = mu.T[None, :, :]   # indexed [., z_t, x_t]
    second = s2.T[None, :, :]

    r_z = _expected_var(joint, mean, second, axis=())
    r_o = _expected_var(joint, mean, second, axis=1)

    C = channel_matrix(channel, chain.k, p_flip, perm, rng)
    # joint over (x_{t-1}, z_t, zhat_t, x_t)
    j4 = joint[:, :, None, :] * C[None, :, :, None]
    r_zhat = _expected_var(j4, mean[:, :, None, :], second[:, :, None, :], axis=1)

    # E_h[ Var_{z|h}( E[x_{t+1} | h, z] ) ] computed directly from the conditional means
    ph = joint.sum(axis=1)
    safe = np.where(ph > 0, ph, 1.0)
    cond_mean = (joint * mean).sum(axis=1) / safe
    dev = mean - cond_mean[:, None, :]
    cross = float((joint * dev * dev).sum())
    residual = abs(r_o - r_z - cross)
    return RiskReport(r_o, r_z, r_zhat, cross, residual, channel)


def z_affects_transition(chain: DiscreteLatentChain, tol: float = 0.0) -> bool:
    """True if two latent states have different observation-transition slices."""
    P = chain.P_x
    return any(np.max(np.abs(P[a] - P[b])) > tol for a in range(chain.k) for b in range(a + 1, chain.k))

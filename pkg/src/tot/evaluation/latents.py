"""Latent read-out from a trained model and structural recovery scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import TotModel, decoder_jacobian, encode
from ..train import make_windows
from .metrics import MccReport, mcc


def estimate_latents(model: TotModel, x: np.ndarray, batch: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Filtered latent estimates: for each t >= t_in - 1 the posterior mean of
    the last history step of the window ending at t.

    Returns (steps, zhat) with zhat[k] the estimate for x[steps[k]].
    """
    c = model.config
    w = make_windows(np.asarray(x, dtype=np.float64), c.t_in)
    out = np.empty((w.shape[0], c.n))
    for b in range(0, w.shape[0], batch):
        out[b:b + batch] = encode(model, np.ascontiguousarray(w[b:b + batch])).mean[:, c.t_in - 1]
    return np.arange(c.t_in - 1, x.shape[0]), out


def latent_mcc(model: TotModel, x: np.ndarray, z: np.ndarray) -> MccReport:
    steps, zhat = estimate_latents(model, x)
    return mcc(z[steps], zhat)


@dataclass
class SupportReport:
    jacobian: np.ndarray  # mean |d xhat_i / d zhat_j|, columns aligned to the true latents
    support: np.ndarray  # estimated support, same layout as the true mask (z_i -> x_j)
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "jacobian": self.jacobian.tolist(), "support": self.support.astype(int).tolist()}


def mean_abs_jacobian(model: TotModel, x: np.ndarray, max_steps: int = 2000, seed: int = 0) -> np.ndarray:
    """Mean |decoder Jacobian| over steps, evaluated at the filtered latents."""
    steps, zhat = estimate_latents(model, x)
    rng = np.random.default_rng(seed)
    if len(steps) > max_steps:
        pick = np.sort(rng.choice(len(steps), size=max_steps, replace=False))
        steps, zhat = steps[pick], zhat[pick]
    x_prev = np.asarray(x)[steps - 1] if model.config.dec_context else None
    return np.abs(decoder_jacobian(model, zhat, x_prev)).mean(axis=0)


def support_recovery(model: TotModel, x: np.ndarray, z: np.ndarray, true_mask: np.ndarray,
                     rel_threshold: float = 0.1) -> SupportReport:
    """Threshold the mean |Jacobian| at a fraction of its max and score it
    against the true mixing support after matching latents by MCC."""
    assignment = latent_mcc(model, x, z).assignment
    J = mean_abs_jacobian(model, x)[:, assignment]  # J[x_i, true z_k]
    est = (J >= rel_threshold * J.max()).T  # (z_k, x_i), the mask layout
    truth = np.asarray(true_mask, dtype=bool)
    tp = float(np.sum(est & truth))
    precision = tp / max(float(est.sum()), 1.0)
    recall = tp / max(float(truth.sum()), 1.0)
    f1 = 0.0 if tp == 0 else 2 * precision * recall / (precision + recall)
    return SupportReport(J.T, est, precision, recall, f1)

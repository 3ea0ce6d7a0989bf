"""Loss terms and the combined training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnum import DimensionError, NonFiniteError, ad
from .model import (EncoderOutput, TotModel, decode, decoder_jacobian, encode, forecast,
                    latent_noise, obs_noise)

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
SIGN_MODES = ("penalize_both", "verbatim")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.01
    gamma: float = 0.01
    sign_mode: str = "penalize_both"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.sign_mode not in SIGN_MODES:
            raise ValueError(f"sign_mode must be one of {SIGN_MODES}")


@dataclass
class LossBreakdown:
    l_y: float
    l_r: float
    l_kl_z: float
    l_kl_o: float
    l_s: float
    total: float

    TERMS = ("l_y", "l_r", "l_kl_z", "l_kl_o", "l_s")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (*self.TERMS, "total")}

    def check_finite(self) -> None:
        for k, v in self.to_dict().items():
            if not np.isfinite(v):
                raise NonFiniteError(f"loss term {k} is not finite ({v})")


def _mse(a, b, what):
    av, bv = ad.value_of(a), ad.value_of(b)
    if np.shape(av) != np.shape(bv):
        raise DimensionError(f"{what}: prediction {np.shape(av)} vs target {np.shape(bv)}")
    return ad.mean(ad.square(a - b))


def loss_forecast(x_pred, x_true):
    return _mse(x_pred, x_true, "loss_forecast")


def loss_reconstruction(x_rec, x_hist):
    return _mse(x_rec, x_hist, "loss_reconstruction")


def std_normal_logpdf(e):
    return -0.5 * ad.square(e) - HALF_LOG_2PI


def latent_prior_logprob(z_window, model: TotModel, params=None):
    """log p(z_{1:T}) per window: standard-normal start plus the flow terms.

    z_window: (T, n) or (B, T, n); returns a scalar or a (B,) vector.
    """
    zv = ad.value_of(z_window)
    if zv.shape[-2] < 2:
        raise DimensionError("the prior needs at least two steps")
    first = ad.sum_(std_normal_logpdf(z_window[..., 0, :]), axis=-1)
    eps, dr = latent_noise(model, z_window[..., :-1, :], z_window[..., 1:, :], params)
    flow = std_normal_logpdf(eps) + ad.log(ad.abs_(dr))
    return first + ad.sum_(flow, axis=(-2, -1))


def gaussian_logpdf(x, mean, log_var):
    return -0.5 * (log_var + ad.square(x - mean) * ad.exp(-1.0 * log_var)) - HALF_LOG_2PI


def kl_latent(enc: EncoderOutput, model: TotModel, params=None, prior_logprob=None):
    """Single-sample estimate of KL(q(z|x) || p(z)), summed over the window and
    averaged over the batch.  `prior_logprob(sample)` may replace the flow prior."""
    log_q = ad.sum_(gaussian_logpdf(enc.sample, enc.mean, enc.log_var), axis=(-2, -1))
    log_p = latent_prior_logprob(enc.sample, model, params) if prior_logprob is None \
        else prior_logprob(enc.sample)
    return ad.mean(log_q - log_p)


def kl_obs(x_window, z_window, model: TotModel, params=None):
    """Mean negative log-likelihood of the observation noise over steps 2..T."""
    eps, dr = obs_noise(model, z_window[..., 1:, :], x_window[..., :-1, :], x_window[..., 1:, :], params)
    return -1.0 * ad.mean(std_normal_logpdf(eps) + ad.log(ad.abs_(dr)))


def loss_sparsity(model: TotModel, z_samples, params=None, x_prev=None):
    """Mean over sampled steps of the summed absolute decoder Jacobian."""
    zv = ad.value_of(z_samples)
    if zv.ndim != 2 or zv.shape[0] < 1:
        raise DimensionError("z_samples must be a non-empty batch of latent vectors")
    J = decoder_jacobian(model, z_samples, x_prev, params)
    return ad.mean(ad.sum_(ad.abs_(J), axis=(-2, -1)))


def combine(terms: dict, weights: LossWeights):
    """Weighted total per sign mode; works on floats and tape variables."""
    a, b, g = weights.alpha, weights.beta, weights.gamma
    base = terms["l_y"] + a * terms["l_r"] + g * terms["l_s"]
    if weights.sign_mode == "verbatim":
        return base - b * (terms["l_kl_z"] - terms["l_kl_o"])
    return base + b * (terms["l_kl_z"] + terms["l_kl_o"])


def total_loss(terms: dict, weights: LossWeights) -> LossBreakdown:
    vals = {k: float(ad.value_of(terms[k])) for k in LossBreakdown.TERMS}
    out = LossBreakdown(**vals, total=float(combine(vals, weights)))
    return out


# ---------------------------------------------------------------- full objective

def window_terms(model: TotModel, x_window, noise, sparsity_idx=None, params=None) -> dict:
    """All five terms on a batch of windows (B, T, n) under a fixed noise draw.

    `noise` is the (B, T, n) reparameterization draw; `sparsity_idx` is an
    array of (batch, step) pairs at which the decoder Jacobian is penalized
    (defaults to every decoded history step of every window).
    """
    c = model.config
    xv = np.asarray(x_window, dtype=np.float64)
    if xv.ndim == 2:
        xv = xv[None]
    if xv.shape[1:] != (c.T, c.n):
        raise DimensionError(f"windows must be (B, {c.T}, {c.n}), got {xv.shape}")
    x_hist, x_fut = xv[:, :c.t_in], xv[:, c.t_in:]
    enc = encode(model, x_hist, noise=noise, params=params)
    z_hist = enc.sample[:, :c.t_in]
    z_fut = enc.sample[:, c.t_in:]
    f = c.first_decoded
    x_prev = x_hist[:, f - 1:-1] if f else None
    terms = {
        "l_y": loss_forecast(forecast(model, z_fut, x_hist, params), x_fut),
        "l_r": loss_reconstruction(decode(model, z_hist[:, f:], x_prev, params), x_hist[:, f:]),
        "l_kl_z": kl_latent(enc, model, params),
    }
    if c.t_in >= 2:
        terms["l_kl_o"] = kl_obs(x_hist, z_hist, model, params)
    else:
        terms["l_kl_o"] = 0.0
    if sparsity_idx is None:
        B = xv.shape[0]
        sparsity_idx = np.array([(b, s) for b in range(B) for s in range(f, c.t_in)])
    sparsity_idx = np.asarray(sparsity_idx)
    if np.any(sparsity_idx[:, 1] < f):
        raise DimensionError("sparsity steps must have a previous observation in the window")
    zs = enc.sample[sparsity_idx[:, 0], sparsity_idx[:, 1]]
    xs = xv[sparsity_idx[:, 0], sparsity_idx[:, 1] - 1] if f else None
    terms["l_s"] = loss_sparsity(model, zs, params, xs)
    return terms


def window_loss(params, model: TotModel, x_window, noise, weights: LossWeights, sparsity_idx=None):
    """Scalar objective for autodiff; returns (total, terms)."""
    terms = window_terms(model, x_window, noise, sparsity_idx, params)
    return combine(terms, weights), terms

"""Latent-variable forecaster: encoder, decoder, noise estimators, reducer, forecaster.

Shapes follow (batch, step, feature).  Every function takes an optional
`params` mapping so the same code runs on stored arrays (inference) and on
tape variables (training).

The noise estimators r^z_i and r^o_i are one small network per dimension,
stacked as a grouped MLP.  Each is strictly increasing in its own-coordinate
argument (z_{t,i} resp. x_{t,i}): that input reaches the output only through
positive weights (stored as logs) and increasing activations, while the
conditioning inputs enter the first layer freely.  This keeps the implied
change of variables a bijection so the flow density is properly normalized.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffnum import DimensionError, MlpSpec, ParamStore, ad, init_mlp, mlp_forward

DIAG_GUARD = 1e-12
RNET_KINDS = ("monotone", "affine")


@dataclass(frozen=True)
class ModelConfig:
    n: int
    t_in: int = 8
    horizon: int = 4
    enc_hidden: tuple[int, ...] = (64,)
    dec_hidden: tuple[int, ...] = (64,)
    fc_hidden: tuple[int, ...] = (64,)
    red_hidden: tuple[int, ...] = (64,)
    rnet_hidden: tuple[int, ...] = (32,)
    rnet_kind: str = "monotone"
    dec_context: bool = True
    slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("enc_hidden", "dec_hidden", "fc_hidden", "red_hidden", "rnet_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.n < 1 or self.t_in < 1 or self.horizon < 1:
            raise ValueError("n, t_in and horizon must all be >= 1")
        if not 0 < self.slope <= 1:
            raise ValueError("slope must lie in (0, 1]")
        if self.dec_context and self.t_in < 2:
            raise ValueError("a decoder conditioned on x_{t-1} needs t_in >= 2")
        if self.rnet_kind not in RNET_KINDS:
            raise ValueError(f"rnet_kind must be one of {RNET_KINDS}")

    @property
    def T(self) -> int:
        return self.t_in + self.horizon

    @property
    def first_decoded(self) -> int:
        """First history step the decoder reconstructs (1 when it needs x_{t-1})."""
        return 1 if self.dec_context else 0

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass
class TotModel:
    config: ModelConfig
    params: ParamStore
    specs: dict[str, MlpSpec] = field(repr=False)
    guard_hits: int = 0

    @classmethod
    def init(cls, config: ModelConfig) -> "TotModel":
        c = config
        n, s = c.n, c.slope
        specs = {
            "enc": MlpSpec.simple(c.t_in * n, c.enc_hidden, 2 * c.T * n, s, _subseed(c.seed, 1)),
            "dec": MlpSpec.simple(2 * n if c.dec_context else n, c.dec_hidden, n, s, _subseed(c.seed, 2)),
            "red": MlpSpec.simple(c.t_in * n, c.red_hidden, n, s, _subseed(c.seed, 3)),
            "fc": MlpSpec.simple(2 * n, c.fc_hidden, n, s, _subseed(c.seed, 4)),
        }
        params = ParamStore()
        for name, spec in specs.items():
            params.update(init_mlp(spec, prefix=f"{name}."))
        # conditioning sizes: r^z sees z_{t-1}; r^o sees (z_t, x_{t-1})
        if c.rnet_kind == "monotone":
            params.update(_init_monotone(n, n, c.rnet_hidden, _subseed(c.seed, 5), "rz."))
            params.update(_init_monotone(n, 2 * n, c.rnet_hidden, _subseed(c.seed, 6), "ro."))
        else:
            for name, ctx, tag in (("rz", n, 5), ("ro", 2 * n, 6)):
                specs[name] = MlpSpec.simple(ctx, c.rnet_hidden, 2, s, _subseed(c.seed, tag), groups=n)
                params.update(init_mlp(specs[name], prefix=f"{name}."))
        return cls(c, params, specs)

    def copy(self) -> "TotModel":
        return TotModel(self.config, self.params.copy(), self.specs, self.guard_hits)

    def with_params(self, params: ParamStore) -> "TotModel":
        return TotModel(self.config, params, self.specs, self.guard_hits)


# ---------------------------------------------------------------- monotone grouped nets

def _init_monotone(groups: int, ctx: int, hidden: tuple[int, ...], seed: int, prefix: str) -> ParamStore:
    """Per-group net r(u; c) increasing in the scalar u.

    Layer 0 has an own-input log-weight `lw0` (G, h0) and free context weights
    `wc0` (G, ctx, h0); later layers carry log-weights `lw{k}`.
    """
    rng = np.random.default_rng(seed)
    sizes = (1 + ctx, *hidden, 1)
    p = ParamStore()
    for k in range(len(sizes) - 1):
        fan_in, fan_out = sizes[k], sizes[k + 1]
        bound = 1.0 / np.sqrt(fan_in)
        if k == 0:
            # positive own-input weights with the fan-in scale, log-stored
            p.add(f"{prefix}lw0", np.log(rng.uniform(0.5 * bound, bound, size=(groups, fan_out))))
            p.add(f"{prefix}wc0", rng.uniform(-bound, bound, size=(groups, ctx, fan_out)))
        else:
            p.add(f"{prefix}lw{k}", np.log(rng.uniform(0.5 * bound, bound, size=(groups, fan_in, fan_out))))
        p.add(f"{prefix}b{k}", rng.uniform(-bound, bound, size=(groups, fan_out)))
    return p


def _n_mono_layers(params, prefix: str) -> int:
    k = 0
    while f"{prefix}b{k}" in params:
        k += 1
    return k


def monotone_forward(params, prefix: str, u, ctx, slope: float):
    """r and dr/du for grouped monotone nets.

    u: (..., G) own inputs, ctx: (..., G, C) or (..., C) shared context.
    Returns (r, dr), both (..., G).
    """
    uv = ad.value_of(u)
    lead, G = uv.shape[:-1], uv.shape[-1]
    cv = ad.value_of(ctx)
    if cv.ndim == uv.ndim:  # shared context: same vector for every group
        ctx = ad.broadcast_to(ad.reshape(ctx, (*lead, 1, cv.shape[-1])), (*lead, G, cv.shape[-1]))
        cv = ad.value_of(ctx)
    C = cv.shape[-1]
    u2 = ad.reshape(u, (-1, G))
    c2 = ad.reshape(ctx, (-1, G, C))
    L = _n_mono_layers(params, prefix)
    w_self = ad.exp(params[f"{prefix}lw0"])  # (G, h)
    a = ad.einsum("bg,gh->bgh", u2, w_self) + ad.einsum("bgc,gch->bgh", c2, params[f"{prefix}wc0"]) \
        + params[f"{prefix}b0"]
    d = ad.broadcast_to(w_self, ad.value_of(a).shape)
    for k in range(1, L):
        mask = ad.leaky_relu_grad(a, slope)
        h = ad.leaky_relu(a, slope)
        d = d * mask
        w = ad.exp(params[f"{prefix}lw{k}"])
        a = ad.einsum("bgi,gio->bgo", h, w) + params[f"{prefix}b{k}"]
        d = ad.einsum("bgi,gio->bgo", d, w)
    r = ad.reshape(a, (*lead, G))
    dr = ad.reshape(d, (*lead, G))
    return r, dr


def affine_forward(spec: MlpSpec, params, prefix: str, u, ctx):
    """r = (u - mu(c)) * exp(-s(c)) per group; dr/du = exp(-s(c))."""
    uv = ad.value_of(u)
    lead, G = uv.shape[:-1], uv.shape[-1]
    cv = ad.value_of(ctx)
    if cv.ndim == uv.ndim:
        ctx = ad.broadcast_to(ad.reshape(ctx, (*lead, 1, cv.shape[-1])), (*lead, G, cv.shape[-1]))
    out = mlp_forward(spec, params, ctx, prefix=prefix)  # (..., G, 2)
    mu, log_s = out[..., 0], out[..., 1]
    dr = ad.exp(-1.0 * log_s)
    return (u - mu) * dr, dr


def _noise_net(model: "TotModel", params, name: str, u, ctx):
    if model.config.rnet_kind == "affine":
        return affine_forward(model.specs[name], params, f"{name}.", u, ctx)
    return monotone_forward(params, f"{name}.", u, ctx, model.config.slope)


def _guard(model: TotModel, dr):
    v = ad.value_of(dr)
    low = np.abs(v) < DIAG_GUARD
    if np.any(low):
        model.guard_hits += int(low.sum())
        warnings.warn(f"{int(low.sum())} noise-estimator diagonal partial(s) below {DIAG_GUARD}; guarded",
                      RuntimeWarning, stacklevel=3)
        return ad.clamp_min(dr, DIAG_GUARD)
    return dr


# ---------------------------------------------------------------- model pieces

@dataclass
class EncoderOutput:
    mean: object
    log_var: object
    sample: object
    noise: np.ndarray


def _check(x, shape_tail, what):
    v = ad.value_of(x)
    if v.shape[-len(shape_tail):] != tuple(shape_tail):
        raise DimensionError(f"{what} has shape {v.shape}, expected trailing {tuple(shape_tail)}")


def encode(model: TotModel, x_hist, rng=None, noise=None, params=None) -> EncoderOutput:
    """Posterior over the whole window (history and horizon) from the history.

    x_hist: (t_in, n) or (B, t_in, n).  The reparameterization draw comes from
    `noise` if given, else from `rng`, else it is zero (sample == mean).
    """
    c = model.config
    p = model.params if params is None else params
    _check(x_hist, (c.t_in, c.n), "x_hist")
    xv = ad.value_of(x_hist)
    single = xv.ndim == 2
    if single:
        x_hist = ad.reshape(x_hist, (1, c.t_in, c.n))
    B = ad.value_of(x_hist).shape[0]
    out = mlp_forward(model.specs["enc"], p, ad.reshape(x_hist, (B, c.t_in * c.n)), prefix="enc.")
    out = ad.reshape(out, (B, c.T, 2 * c.n))
    mean = out[:, :, :c.n]
    log_var = out[:, :, c.n:]
    if noise is None:
        noise = rng.standard_normal((B, c.T, c.n)) if rng is not None else np.zeros((B, c.T, c.n))
    noise = np.asarray(noise, dtype=np.float64).reshape(B, c.T, c.n)
    sample = mean + ad.exp(log_var * 0.5) * noise
    if single:
        mean, log_var, sample, noise = (ad.reshape(a, (c.T, c.n)) for a in (mean, log_var, sample, noise))
    return EncoderOutput(mean, log_var, sample, ad.value_of(noise))


def _dec_input(model: TotModel, z, x_prev):
    if not model.config.dec_context:
        return z
    zv = ad.value_of(z)
    if x_prev is None:
        x_prev = np.zeros(zv.shape)
    _check(x_prev, (model.config.n,), "x_prev")
    if ad.value_of(x_prev).shape != zv.shape:
        raise DimensionError(f"x_prev {ad.value_of(x_prev).shape} does not match z {zv.shape}")
    return ad.concat([z, x_prev], axis=-1)


def decode(model: TotModel, z, x_prev=None, params=None):
    """Per-step decoder: (..., n) latents -> (..., n) reconstructions.

    With `dec_context` the decoder also sees the previous observation
    (teacher-forced; zeros when omitted), since x_t depends on x_{t-1} as well
    as z_t.  Output step s still depends on z only through step s.
    """
    p = model.params if params is None else params
    _check(z, (model.config.n,), "z")
    return mlp_forward(model.specs["dec"], p, _dec_input(model, z, x_prev), prefix="dec.")


def latent_noise(model: TotModel, z_prev, z_curr, params=None):
    """(eps_z_hat, diag partials dr_i/dz_curr_i), both (..., n)."""
    p = model.params if params is None else params
    n = model.config.n
    _check(z_prev, (n,), "z_prev")
    _check(z_curr, (n,), "z_curr")
    r, dr = _noise_net(model, p, "rz", z_curr, z_prev)
    return r, _guard(model, dr)


def obs_noise(model: TotModel, z_curr, x_prev, x_curr, params=None):
    """(eps_o_hat, diag partials dr_i/dx_curr_i), both (..., n)."""
    p = model.params if params is None else params
    n = model.config.n
    for a, what in ((z_curr, "z_curr"), (x_prev, "x_prev"), (x_curr, "x_curr")):
        _check(a, (n,), what)
    ctx = ad.concat([z_curr, x_prev], axis=-1)
    r, dr = _noise_net(model, p, "ro", x_curr, ctx)
    return r, _guard(model, dr)


def reduce_history(model: TotModel, x_hist, params=None):
    c = model.config
    p = model.params if params is None else params
    xv = ad.value_of(x_hist)
    flat = ad.reshape(x_hist, (*xv.shape[:-2], c.t_in * c.n))
    return mlp_forward(model.specs["red"], p, flat, prefix="red.")


def forecast(model: TotModel, z_future, x_hist, params=None):
    """Predict x_{t+1:T} from future latents and a reduction of the history."""
    c = model.config
    p = model.params if params is None else params
    _check(z_future, (c.horizon, c.n), "z_future")
    _check(x_hist, (c.t_in, c.n), "x_hist")
    ctx = reduce_history(model, x_hist, p)  # (..., n)
    zv = ad.value_of(z_future)
    ctx = ad.broadcast_to(ad.reshape(ctx, (*zv.shape[:-2], 1, c.n)), zv.shape)
    inp = ad.concat([z_future, ctx], axis=-1)
    return mlp_forward(model.specs["fc"], p, inp, prefix="fc.")


def decoder_jacobian(model: TotModel, z_t, x_prev=None, params=None):
    """J[..., i, j] = d xhat_i / d z_j at each step, by forward-mode columns."""
    p = model.params if params is None else params
    n = model.config.n
    zv = ad.value_of(z_t)
    _check(z_t, (n,), "z_t")
    inp = _dec_input(model, z_t, x_prev)
    d_in = ad.value_of(inp).shape[-1]
    tangent = np.zeros((*zv.shape[:-1], n, d_in))
    tangent[..., :, :n] = np.eye(n)
    _, dx = mlp_forward(model.specs["dec"], p, inp, prefix="dec.", tangent=tangent)
    # dx[..., j, i] is the derivative along z_j of output i
    return ad.transpose(dx, (*range(len(zv.shape) - 1), len(zv.shape), len(zv.shape) - 1))

"""Forecasters that differ only in their latent input, and their comparison.

Every regime trains the same MLP on [flatten(x_hist), flatten(z_future)].
Only what fills the latent slot changes:

    baseline : zeros (the slot carries no information)
    oracle   : the true future latents
    tot      : future latents estimated by a trained TOT encoder from x_hist
    noise    : i.i.d. standard-normal draws (control; should match baseline)
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..diffnum import AdamHyper, AdamState, MlpSpec, ad, adam_step, clip_by_global_norm, init_mlp, mlp_forward, value_and_grad
from ..model import ModelConfig, TotModel, encode
from ..synthgen import Dataset
from ..train import TrainConfig, make_windows, train_offline
from .metrics import forecast_metrics

REGIMES = ("baseline", "oracle", "tot", "noise")


class MissingLatentsError(ValueError):
    """The dataset carries no ground-truth latents, so the oracle cannot run."""


@dataclass(frozen=True)
class BaselineConfig:
    hidden: tuple[int, ...] = (64,)
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    grad_clip: float = 5.0
    slope: float = 0.2
    seed: int = 0
    regimes: tuple[str, ...] = ("baseline", "oracle", "tot")

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        bad = set(self.regimes) - set(REGIMES)
        if bad:
            raise ValueError(f"unknown regimes {sorted(bad)}; choose from {REGIMES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class BaselineReport:
    mse: dict[str, float]
    mae: dict[str, float]
    tot_native_mse: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mse": dict(self.mse), "mae": dict(self.mae),
                "tot_native_mse": self.tot_native_mse, **self.extra}


def split_windows(ds: Dataset, t_in: int, horizon: int):
    """(train, validation) window start indices.

    Training windows end before the validation range; validation windows
    forecast targets that all lie inside it (their history may precede it).
    """
    T = t_in + horizon
    v0 = ds.validation_range.start
    if ds.config.validation_size < horizon:
        raise ValueError("validation range is shorter than the forecast horizon")
    train = np.arange(0, v0 - T + 1)
    val = np.arange(max(v0 - t_in, 0), ds.T - T + 1)
    if len(train) < 1:
        raise ValueError("training range is shorter than one window")
    return train, val


def _fit_forecaster(inputs: np.ndarray, targets: np.ndarray, cfg: BaselineConfig, seed: int):
    """Plain MSE regression with Adam; returns a predict function."""
    spec = MlpSpec.simple(inputs.shape[1], cfg.hidden, targets.shape[1], cfg.slope, seed)
    params = init_mlp(spec, prefix="f.")
    state = AdamState.zeros(params)
    hyper = AdamHyper(lr=cfg.learning_rate)

    def loss(p, xb, yb):
        d = mlp_forward(spec, p, xb, prefix="f.") - yb
        return ad.mean(ad.square(d))

    N = inputs.shape[0]
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([seed, epoch]).permutation(N)
        for b in range(0, N, cfg.batch_size):
            sel = order[b:b + cfg.batch_size]
            _, g, _ = value_and_grad(loss, params, inputs[sel], targets[sel])
            g, _ = clip_by_global_norm(g, cfg.grad_clip)
            params, state = adam_step(params, g, state, hyper)
    return lambda a: mlp_forward(spec, params, a, prefix="f.")


def tot_future_latents(model: TotModel, x_hist: np.ndarray) -> np.ndarray:
    """Posterior-mean latents for the horizon, (B, horizon, n)."""
    return encode(model, x_hist).mean[:, model.config.t_in:]


def baseline_suite(ds: Dataset, tot_model: TotModel, cfg: BaselineConfig = BaselineConfig()) -> BaselineReport:
    """Validation MSE/MAE of identical forecasters fed different latent inputs.

    `tot_model` must already be trained; its window sizes set t_in and horizon.
    """
    if "oracle" in cfg.regimes and not ds.has_latents:
        raise MissingLatentsError("dataset has no ground-truth latents; the oracle regime needs them")
    c = tot_model.config
    if ds.n != c.n:
        raise ValueError(f"dataset n={ds.n} but the model expects n={c.n}")
    t_in, h = c.t_in, c.horizon
    tr, va = split_windows(ds, t_in, h)
    xw = make_windows(ds.x, c.T)
    zw = make_windows(ds.z, c.T) if ds.has_latents else None
    base_seed = int(np.random.SeedSequence([cfg.seed, 0xBA5E]).generate_state(1)[0])

    def latent_slot(regime, idx):
        if regime == "baseline":
            return np.zeros((len(idx), h, c.n))
        if regime == "oracle":
            return zw[idx, t_in:]
        if regime == "noise":
            return np.random.default_rng([cfg.seed, 0x0153]).standard_normal((len(xw), h, c.n))[idx]
        return tot_future_latents(tot_model, xw[idx, :t_in])

    mse, mae = {}, {}
    for regime in cfg.regimes:
        feats = {}
        for name, idx in (("train", tr), ("val", va)):
            zin = latent_slot(regime, idx)
            feats[name] = np.concatenate([xw[idx, :t_in].reshape(len(idx), -1), zin.reshape(len(idx), -1)], axis=1)
        # matched seeds: every regime starts from the same initialization and batch order
        fit = _fit_forecaster(feats["train"], xw[tr, t_in:].reshape(len(tr), -1), cfg, base_seed)
        pred = fit(feats["val"]).reshape(len(va), h, c.n)
        mse[regime], mae[regime] = forecast_metrics(pred, xw[va, t_in:])
    native = None
    if "tot" in cfg.regimes:
        from ..train import predict
        native = forecast_metrics(predict(tot_model, xw[va, :t_in]), xw[va, t_in:])[0]
    return BaselineReport(mse, mae, native)


def train_tot(ds: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig) -> TotModel:
    """Offline TOT training on the dataset's training range."""
    return train_offline(ds, TotModel.init(model_cfg), train_cfg).model

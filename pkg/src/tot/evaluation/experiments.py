"""Desk-scale synthetic experiments shared by the CLI and the acceptance suite.

Each runner regenerates its data from the preset and seed, trains, and
returns plain numbers.  The default settings are the tuned desk-scale ones;
they differ from the library-wide loss defaults where noted in the docs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..model import ModelConfig, TotModel
from ..objective import LossWeights
from ..synthgen import generate_dataset, preset
from ..train import TrainConfig, online_run, train_offline
from .baselines import BaselineConfig, baseline_suite
from .latents import latent_mcc, support_recovery


@dataclass(frozen=True)
class ExperimentSettings:
    t_in: int = 8
    horizon: int = 4
    enc_hidden: tuple[int, ...] = (256,)
    rnet_kind: str = "affine"
    epochs: int = 10
    beta: float = 5e-4
    gamma: float = 0.0
    kl_warmup_steps: int = 3000

    def model_config(self, n: int, seed: int) -> ModelConfig:
        return ModelConfig(n=n, t_in=self.t_in, horizon=self.horizon, enc_hidden=self.enc_hidden,
                           rnet_kind=self.rnet_kind, seed=seed)

    def train_config(self, seed: int, **overrides) -> TrainConfig:
        cfg = TrainConfig(epochs=self.epochs, seed=seed, kl_warmup_steps=self.kl_warmup_steps,
                          weights=LossWeights(beta=self.beta, gamma=self.gamma))
        return replace(cfg, **overrides)


DEFAULT_SETTINGS = ExperimentSettings()


def _train(ds, settings: ExperimentSettings, seed: int, **train_overrides) -> TotModel:
    model = TotModel.init(settings.model_config(ds.n, seed))
    return train_offline(ds, model, settings.train_config(seed, **train_overrides)).model


def train_on_preset(preset_name: str, seed: int, settings: ExperimentSettings = DEFAULT_SETTINGS):
    """Generate the preset with this seed and train on it; returns (dataset, model)."""
    ds = generate_dataset(preset(preset_name, seed=seed))
    return ds, _train(ds, settings, seed)


def identifiability_score(ds, model: TotModel) -> float:
    """MCC between true and filtered estimated latents over the whole series."""
    return latent_mcc(model, ds.x, ds.z).score


def forecasting_report(ds, model: TotModel, seed: int, baseline_cfg: BaselineConfig | None = None) -> dict:
    """Validation MSE of the baseline / oracle / TOT-latent forecasters."""
    return baseline_suite(ds, model, baseline_cfg or BaselineConfig(seed=seed)).to_dict()


def identifiability_run(preset_name: str, seed: int, settings: ExperimentSettings = DEFAULT_SETTINGS) -> float:
    return identifiability_score(*train_on_preset(preset_name, seed, settings))


def forecasting_run(preset_name: str, seed: int, settings: ExperimentSettings = DEFAULT_SETTINGS,
                    baseline_cfg: BaselineConfig | None = None) -> dict:
    ds, model = train_on_preset(preset_name, seed, settings)
    return forecasting_report(ds, model, seed, baseline_cfg)


def sparsity_run(seed: int, gamma: float, settings: ExperimentSettings = DEFAULT_SETTINGS) -> dict:
    """Support recovery F1 on the sparse-mixing variant for one sparsity weight."""
    ds = generate_dataset(preset("sparse", seed=seed))
    model = _train(ds, replace(settings, gamma=gamma), seed)
    rep = support_recovery(model, ds.x, ds.z, ds.mixing.sparsity_mask)
    return {"f1": float(rep.f1), "precision": float(rep.precision), "recall": float(rep.recall),
            "mcc": latent_mcc(model, ds.x, ds.z).score}


def drift_run(seed: int, k_steps: int, settings: ExperimentSettings = DEFAULT_SETTINGS,
              pretrain_epochs: int = 3) -> dict:
    """Pretrain on the pre-drift segment, then run the online protocol.

    Returns the mean per-arrival MSE over arrivals after the drift point.
    """
    ds = generate_dataset(preset("drift", seed=seed))
    cut = ds.config.drift_at
    model = TotModel.init(settings.model_config(ds.n, seed))
    cfg = settings.train_config(seed, epochs=pretrain_epochs, online_steps_per_arrival=k_steps)
    model = train_offline(ds.x[:cut], model, cfg).model
    res = online_run(ds.x, model, cfg)
    post = [r["mse"] for r in res.rows if r["step"] > cut]
    pre = [r["mse"] for r in res.rows if r["step"] <= cut]
    return {"post_drift_mse": float(np.mean(post)), "pre_drift_mse": float(np.mean(pre)), "rows": len(res.rows)}

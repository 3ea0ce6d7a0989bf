"""Identifiability and forecasting metrics, baselines, and the exact risk lab."""
from .baselines import REGIMES, BaselineConfig, BaselineReport, MissingLatentsError, baseline_suite, split_windows
from .latents import SupportReport, estimate_latents, latent_mcc, mean_abs_jacobian, support_recovery
from .metrics import MccReport, abs_corr_matrix, forecast_metrics, mcc
from .risk_lab import CHANNELS, RiskReport, channel_matrix, risk_lab, z_affects_transition

__all__ = [
    "REGIMES", "BaselineConfig", "BaselineReport", "MissingLatentsError", "baseline_suite", "split_windows",
    "SupportReport", "estimate_latents", "latent_mcc", "mean_abs_jacobian", "support_recovery",
    "MccReport", "abs_corr_matrix", "forecast_metrics", "mcc",
    "CHANNELS", "RiskReport", "channel_matrix", "risk_lab", "z_affects_transition",
]

"""Latent-variable time-series forecasting with flow-regularized sequential VAEs,
synthetic benchmarks, and exact discrete theory labs."""
__version__ = "0.1.0"

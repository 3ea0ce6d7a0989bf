"""Identifiability and forecasting scores."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..diffnum import DimensionError


@dataclass
class MccReport:
    corr: np.ndarray
    assignment: np.ndarray  # assignment[i] = estimated column matched to true column i
    score: float

    def to_dict(self) -> dict:
        return {"score": self.score, "assignment": self.assignment.tolist(),
                "corr": self.corr.tolist()}


def abs_corr_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|Pearson correlation| between every column of `a` and every column of `b`.

    Pairs involving a constant column get correlation 0.
    """
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt((b * b).sum(axis=0))
    cov = a.T @ b
    denom = np.outer(na, nb)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(np.abs(c), 0.0, 1.0)


def mcc(z_true, z_est) -> MccReport:
    """Mean correlation coefficient after the best one-to-one column matching."""
    z_true = np.asarray(z_true, dtype=np.float64)
    z_est = np.asarray(z_est, dtype=np.float64)
    if z_true.ndim != 2 or z_true.shape != z_est.shape:
        raise DimensionError(f"mcc needs equal N x n arrays, got {z_true.shape} and {z_est.shape}")
    if z_true.shape[0] < 3:
        raise DimensionError("mcc needs at least 3 samples")
    corr = abs_corr_matrix(z_true, z_est)
    rows, cols = linear_sum_assignment(corr, maximize=True)
    assignment = cols[np.argsort(rows)]
    score = float(corr[np.arange(len(assignment)), assignment].mean())
    return MccReport(corr, assignment, score)


def forecast_metrics(pred, truth) -> tuple[float, float]:
    """(MSE, MAE) over all entries."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    d = pred - truth
    return float(np.mean(d * d)), float(np.mean(np.abs(d)))

"""
Forecast error metrics and the historical-average baseline

All metrics are computed on the original scale over observed targets only.
"""

import math
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .errors import EvaluationError, ShapeError

HORIZONS = (3, 6, 12)
MAPE_MIN_TARGET = 1e-3
INTERVAL_Z = 1.96


def _masked(pred: np.ndarray, target: np.ndarray, mask: Optional[np.ndarray]):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape:
        raise ShapeError(f"target mask shape {mask.shape} does not match {pred.shape}")
    return pred, target, mask


def _errors(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> Dict[str, Optional[float]]:
    residual = (pred - target)[mask]
    if residual.size == 0:
        return {'mae': None, 'rmse': None, 'mape': None}

    valid = mask & (np.abs(target) >= MAPE_MIN_TARGET)
    mape = None
    if valid.any():
        mape = float(np.mean(np.abs(pred[valid] - target[valid]) / np.abs(target[valid])) * 100.0)
    return {
        'mae': float(np.mean(np.abs(residual))),
        'rmse': float(math.sqrt(np.mean(residual * residual))),
        'mape': mape,
    }


def forecast_metrics(pred, target, mask=None, horizons: Sequence[int] = HORIZONS) -> Dict[str, Optional[float]]:
    """
    MAE / RMSE / MAPE at selected horizon steps and averaged over all steps

    The horizon is the last axis. Steps beyond the forecast length are
    skipped. MAPE is in percent and ignores targets with |y| < 1e-3.

    Returns:
        dict: keys like ``mae@3`` ... ``mape@avg``; ``None`` where undefined

    Raises:
        EvaluationError: If there are no predictions at all
    """

    pred, target, mask = _masked(pred, target, mask)
    if pred.size == 0:
        raise EvaluationError("cannot evaluate an empty split")

    record: Dict[str, Optional[float]] = {}
    steps = pred.shape[-1]
    for h in horizons:
        if h <= steps:
            for key, value in _errors(pred[..., h - 1], target[..., h - 1], mask[..., h - 1]).items():
                record[f"{key}@{h}"] = value
    for key, value in _errors(pred, target, mask).items():
        record[f"{key}@avg"] = value
    return record


def horizon_table(pred, target, mask=None) -> pd.DataFrame:
    """One row per horizon step: horizon, mae, rmse, mape"""

    pred, target, mask = _masked(pred, target, mask)
    rows = []
    for h in range(pred.shape[-1]):
        row = {'horizon': h + 1}
        row.update(_errors(pred[..., h], target[..., h], mask[..., h]))
        rows.append(row)
    return pd.DataFrame(rows, columns=['horizon', 'mae', 'rmse', 'mape'])


def interval_coverage(mu, sigma, target, mask=None, z: float = INTERVAL_Z) -> Optional[float]:
    """Share of observed targets inside mu +/- z * sigma"""

    mu, target, mask = _masked(mu, target, mask)
    sigma = np.asarray(sigma, dtype=np.float64)
    inside = np.abs(target - mu) <= z * sigma
    return float(inside[mask].mean()) if mask.any() else None


def sigma_correlation(predicted_sigma, true_sigma) -> float:
    """Pearson correlation between predicted and true noise levels"""

    predicted = np.asarray(predicted_sigma, dtype=np.float64).ravel()
    truth = np.asarray(true_sigma, dtype=np.float64).ravel()
    if predicted.size != truth.size or predicted.size < 2:
        raise ShapeError(f"need two equal-length samples, got {predicted.size} and {truth.size}")
    return float(stats.pearsonr(predicted, truth)[0])


def ha_baseline(inputs, input_mask, horizon: int, fallback: np.ndarray) -> np.ndarray:
    """
    Historical average: every horizon step is the mean of the observed window

    Args:
        inputs: (..., N, W) windows on the original scale
        input_mask: (..., N, W) observed flags
        horizon: nu
        fallback: (N,) value used where a sensor's window is fully masked
            (the training mean)

    Returns:
        np.ndarray: (..., N, nu)
    """

    inputs = np.asarray(inputs, dtype=np.float64)
    mask = np.asarray(input_mask, dtype=bool)
    counts = mask.sum(axis=-1)
    totals = np.where(mask, inputs, 0.0).sum(axis=-1)
    fallback = np.broadcast_to(np.asarray(fallback, dtype=np.float64), counts.shape)
    means = np.where(counts > 0, totals / np.maximum(counts, 1), fallback)
    return np.repeat(means[..., None], horizon, axis=-1)


def aggregate_runs(records: Sequence[Dict[str, Optional[float]]]) -> Dict[str, Dict[str, Optional[float]]]:
    """mean and std per metric across repeated runs"""

    frame = pd.DataFrame(list(records), dtype=np.float64)
    return {
        column: {
            'mean': None if frame[column].isna().all() else float(frame[column].mean()),
            'std': None if frame[column].isna().all() else float(frame[column].std(ddof=0)),
        }
        for column in frame.columns
    }


__all__ = [
    'HORIZONS', 'aggregate_runs', 'forecast_metrics', 'ha_baseline', 'horizon_table', 'interval_coverage',
    'sigma_correlation',
]

"""Error metrics and interval diagnostics.

MAE, MSE, RMSE and the coefficient of determination follow the standard
definitions with the population variance about the truth's mean in the
R-squared denominator. MAPE is mean |y - yhat| / max(|y|, 1e-8), reported
as a fraction (not percent). A constant truth vector leaves R-squared
undefined; it is reported as NaN with the per-column flag cleared.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

MAPE_GUARD = 1e-8

METRIC_KEYS = ("mae", "mse", "rmse", "r2", "mape")


@dataclass
class MetricReport:
    """Per-output-column error metrics, with optional interval diagnostics."""

    mae: np.ndarray
    mse: np.ndarray
    rmse: np.ndarray
    r2: np.ndarray
    mape: np.ndarray
    r2_defined: np.ndarray
    ci_coverage: float | None = None
    mean_ci_width: float | None = None

    def per_column(self, j: int) -> dict:
        out = {k: float(getattr(self, k)[j]) for k in METRIC_KEYS}
        out["r2_defined"] = bool(self.r2_defined[j])
        return out

    def scalars(self) -> dict:
        """Column-averaged metrics with fixed key names, ready for JSON."""
        out = {k: float(np.mean(getattr(self, k))) for k in METRIC_KEYS}
        if self.ci_coverage is not None:
            out["coverage"] = float(self.ci_coverage)
        if self.mean_ci_width is not None:
            out["width"] = float(self.mean_ci_width)
        return out

    def to_json(self) -> str:
        payload = {
            "columns": [self.per_column(j) for j in range(len(self.mae))],
            "overall": self.scalars(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        return self.scalars()


def _as_columns(y) -> np.ndarray:
    a = np.asarray(y, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"metrics expect 1-D or 2-D arrays, got shape {a.shape}")
    return a


def compute(y, yhat) -> MetricReport:
    """Column-wise MAE/MSE/RMSE/R2/MAPE of paired truth and prediction."""
    y = _as_columns(y)
    yhat = _as_columns(yhat)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: truth {y.shape} vs prediction {yhat.shape}")
    if y.size == 0:
        raise ValueError("empty inputs")
    err = y - yhat
    mae = np.mean(np.abs(err), axis=0)
    mse = np.mean(err**2, axis=0)
    rmse = np.sqrt(mse)
    mape = np.mean(np.abs(err) / np.maximum(np.abs(y), MAPE_GUARD), axis=0)
    var = np.mean((y - y.mean(axis=0)) ** 2, axis=0)
    defined = var > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(defined, 1.0 - mse / var, np.nan)
    return MetricReport(mae=mae, mse=mse, rmse=rmse, r2=r2, mape=mape, r2_defined=defined)


def r2_score(y, yhat) -> float:
    """Column-averaged R-squared; NaN when every column is constant."""
    return float(np.nanmean(compute(y, yhat).r2))


def interval_diagnostics(y, lower, upper) -> tuple[float, float]:
    """(coverage, mean width) of per-point bands against the truth."""
    y = _as_columns(y)
    lo = _as_columns(lower)
    hi = _as_columns(upper)
    if not (y.shape == lo.shape == hi.shape):
        raise ValueError(f"length mismatch: truth {y.shape}, lower {lo.shape}, upper {hi.shape}")
    coverage = float(np.mean((lo <= y) & (y <= hi)))
    width = float(np.mean(hi - lo))
    return coverage, width


def summary_diagnostics(y, summary) -> tuple[float, float]:
    """interval_diagnostics against a PredictiveSummary's 95% band."""
    return interval_diagnostics(y, summary.lower, summary.upper)


def attach_interval(report: MetricReport, y, summary) -> MetricReport:
    coverage, width = summary_diagnostics(y, summary)
    report.ci_coverage = coverage
    report.mean_ci_width = width
    return report

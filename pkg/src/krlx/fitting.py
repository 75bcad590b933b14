"""Least-squares slope fits used by the verification reports."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual_rms: float
    n_points: int
    degenerate: bool = False


def _fit_line(x: np.ndarray, y: np.ndarray) -> FitResult:
    if len(x) < 4:
        return FitResult(np.nan, np.nan, np.nan, len(x), degenerate=True)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return FitResult(float(coef[0]), float(coef[1]),
                     float(np.sqrt(np.mean(resid**2))), len(x))


def fit_loglog(t, y, window=None, floor=1e-300) -> FitResult:
    """Slope of log y vs log t, restricted to a t-window, skipping tiny y."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (y > floor) & (t > 0)
    if window is not None:
        keep &= (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
    return _fit_line(np.log(t[keep]), np.log(y[keep]))


def fit_exp_rate(t, y, window=None, floor=1e-300) -> FitResult:
    """Fit y ~ C exp(-rate t); FitResult.slope is d(log y)/dt (rate = -slope)."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > floor
    if window is not None:
        keep &= (t >= window[0] * (1 - 1e-12)) & (t <= window[1] * (1 + 1e-12))
    return _fit_line(t[keep], np.log(y[keep]))

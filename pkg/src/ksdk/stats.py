"""Estimators and decision helpers shared by the experiment harness.

Means carry normal-theory standard errors, proportions carry Wilson
intervals, and scaling exponents come from straight-line fits in log
coordinates.  Verdicts elsewhere are pure functions of these outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as _st


def mean_and_stderr(samples: np.ndarray) -> tuple[float, float]:
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(n))


def wilson_interval(
    successes: int, n: int, confidence: float = 0.95
) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if not 0 <= successes <= n or n == 0:
        raise ValueError("need 0 <= successes <= n, n > 0")
    z = float(_st.norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass(frozen=True)
class LineFit:
    """Straight line y = slope * x + intercept with standard errors."""

    slope: float
    slope_se: float
    intercept: float
    intercept_se: float

    def slope_interval(self, confidence: float = 0.95) -> tuple[float, float]:
        z = float(_st.norm.ppf(0.5 + confidence / 2.0))
        return (self.slope - z * self.slope_se, self.slope + z * self.slope_se)


def line_fit(x: np.ndarray, y: np.ndarray) -> LineFit:
    """Ordinary least squares; errors scaled by the residual variance."""
    coef, cov = np.polyfit(np.asarray(x, float), np.asarray(y, float), 1, cov=True)
    return LineFit(
        float(coef[0]), float(np.sqrt(cov[0, 0])),
        float(coef[1]), float(np.sqrt(cov[1, 1])),
    )


def weighted_line_fit(x: np.ndarray, y: np.ndarray, var_y: np.ndarray) -> LineFit:
    """Least squares with known per-point variances (errors not rescaled)."""
    var_y = np.asarray(var_y, float)
    if np.any(var_y <= 0):
        raise ValueError("variances must be positive")
    coef, cov = np.polyfit(
        np.asarray(x, float), np.asarray(y, float), 1,
        w=1.0 / np.sqrt(var_y), cov="unscaled",
    )
    return LineFit(
        float(coef[0]), float(np.sqrt(cov[0, 0])),
        float(coef[1]), float(np.sqrt(cov[1, 1])),
    )

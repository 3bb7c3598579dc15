"""Paired t-test, Pearson correlation and grid preference search."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc


class DegenerateVariance(ValueError):
    pass


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t through the regularized incomplete beta."""
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_t_test(x, y) -> TTestResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"paired samples need equal 1-D shapes, got {x.shape} and {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    d = x - y
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateVariance("all paired differences are identical; t is undefined")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TTestResult(t, n - 1, t_two_sided_p(t, n - 1))


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson_r needs two 1-D samples of equal length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("constant input has no correlation")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


def preference_search(oracle, step: int = 5) -> int:
    """Grid point (percent) of maximal preference via interval halving.

    Each probe compares neighbours ``g`` and ``g + step`` and keeps the
    uphill half. For a strictly unimodal oracle this is the argmax; a flat
    oracle returns 0.
    """
    if step <= 0 or 100 % step:
        raise ValueError(f"step {step} must be a positive divisor of 100")
    grid = list(range(0, 101, step))
    seen = {}

    def score(i):
        if i not in seen:
            v = float(oracle(grid[i]))
            if not math.isfinite(v):
                raise ValueError(f"oracle returned {v} at ratio {grid[i]}")
            seen[i] = v
        return seen[i]

    lo, hi = 0, len(grid) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if score(mid) < score(mid + 1):
            lo = mid + 1
        else:
            hi = mid
    return grid[lo]

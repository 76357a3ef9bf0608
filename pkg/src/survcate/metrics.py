"""Evaluation metrics for CATE predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

PERCENTILES = (0.10, 0.25, 0.50, 0.75, 0.90)


@dataclass(frozen=True)
class EvalResult:
    rrmse: float
    kendall_tau: float | None  # None when either vector is constant
    n_test: int


def _pair(predicted, truth):
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.ndim != 1 or p.shape != t.shape:
        raise ValueError("predicted and truth must be 1-d arrays of equal length")
    if p.size < 2:
        raise ValueError("need at least 2 points")
    return p, t


def rrmse(predicted, truth) -> float:
    """Root mean squared error divided by the population sd of the truth."""
    p, t = _pair(predicted, truth)
    sd = np.std(t)
    if not sd > 0:
        raise ValueError("rrmse is undefined when the true CATE is constant")
    return float(np.sqrt(np.mean((p - t) ** 2)) / sd)


@njit(cache=True)
def _tied_pairs(v):
    # v sorted; number of pairs with equal values
    total = 0
    run = 1
    for i in range(1, v.size):
        if v[i] == v[i - 1]:
            run += 1
        else:
            total += run * (run - 1) // 2
            run = 1
    return total + run * (run - 1) // 2


@njit(cache=True)
def _merge_count(y):
    """Stable bottom-up merge sort of ``y`` in place; returns the number of swapped pairs."""
    n = y.size
    buf = np.empty_like(y)
    swaps = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if y[j] < y[i]:
                    buf[k] = y[j]
                    swaps += mid - i
                    j += 1
                else:
                    buf[k] = y[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = y[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = y[j]
                j += 1
                k += 1
        y[:] = buf
        width *= 2
    return swaps


@njit(cache=True)
def _kendall_sorted(x, y):
    """Knight's tau-b on pairs already sorted by (x, y). Returns nan if undefined."""
    n = x.size
    n0 = n * (n - 1) // 2
    n1 = _tied_pairs(x)
    # pairs tied in both coordinates
    n3 = 0
    run = 1
    for i in range(1, n):
        if x[i] == x[i - 1] and y[i] == y[i - 1]:
            run += 1
        else:
            n3 += run * (run - 1) // 2
            run = 1
    n3 += run * (run - 1) // 2
    yy = y.copy()
    swaps = _merge_count(yy)
    n2 = _tied_pairs(yy)
    denom = float(n0 - n1) * float(n0 - n2)
    if denom <= 0.0:
        return np.nan
    s = n0 - n1 - n2 + n3 - 2 * swaps
    return s / np.sqrt(denom)


def kendall_tau(predicted, truth) -> float | None:
    """Tie-corrected Kendall rank correlation; None when either input is constant."""
    p, t = _pair(predicted, truth)
    order = np.lexsort((t, p))
    value = _kendall_sorted(np.ascontiguousarray(p[order]), np.ascontiguousarray(t[order]))
    return None if np.isnan(value) else float(np.clip(value, -1.0, 1.0))


def evaluate(predicted, truth) -> EvalResult:
    p, t = _pair(predicted, truth)
    return EvalResult(rrmse(p, t), kendall_tau(p, t), p.size)


def percentile_summary(values, probs=PERCENTILES) -> np.ndarray:
    """Linear-interpolation percentiles (position ``1 + (n - 1) p``)."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no values to summarize")
    return np.percentile(v, 100 * np.asarray(probs, dtype=float))

"""Empirical convergence orders for refinement and epsilon ladders."""

from typing import Sequence

import numpy as np
from scipy.optimize import brentq


def observed_orders(steps: Sequence[float], errors: Sequence[float]) -> np.ndarray:
    """Pairwise orders log(e_i / e_{i+1}) / log(s_i / s_{i+1}) along a ladder."""
    s = np.asarray(steps, dtype=float)
    e = np.abs(np.asarray(errors, dtype=float))
    if s.shape != e.shape or s.size < 2:
        raise ValueError("need matching ladders of at least two entries")
    return np.log(e[:-1] / e[1:]) / np.log(s[:-1] / s[1:])


def loglog_slope(steps: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log|value| against log(step)."""
    s = np.asarray(steps, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    slope, _ = np.polyfit(np.log(s), np.log(v), 1)
    return float(slope)


def richardson_differences(values: Sequence[float]) -> np.ndarray:
    """Successive differences of a refinement sequence (errors without a reference)."""
    return np.abs(np.diff(np.asarray(values, dtype=float)))


def refinement_orders(steps: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """
    Orders p from consecutive triples of a refinement sequence with arbitrary step ratios.

    Each triple solves d_i / d_{i+1} = (s_i^p - s_{i+1}^p) / (s_{i+1}^p - s_{i+2}^p) for p,
    with d the successive differences; NaN where no order in (0.05, 20) fits.
    """
    s = np.asarray(steps, dtype=float)
    if s.size != len(values) or s.size < 3:
        raise ValueError("need matching ladders of at least three entries")
    d = richardson_differences(values)
    orders = []
    for i in range(s.size - 2):
        h0, h1, h2 = s[i : i + 3]
        if d[i] == 0.0 or d[i + 1] == 0.0:
            orders.append(np.nan)
            continue
        target = np.log(d[i] / d[i + 1])

        def mismatch(p: float) -> float:
            return np.log((h0**p - h1**p) / (h1**p - h2**p)) - target

        try:
            orders.append(brentq(mismatch, 0.05, 20.0))
        except ValueError:
            orders.append(np.nan)
    return np.array(orders)

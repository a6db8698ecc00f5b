"""Least-squares rate fits on log-log and semi-log axes."""

from __future__ import annotations

import numpy as np


class InsufficientData(ValueError):
    """Not enough usable points for a fit."""


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


def loglog_fit(t, v):
    """Slope of log v against log t; returns (slope, intercept, r2)."""
    return _linfit(np.log(np.asarray(t, dtype=float)), np.log(np.asarray(v, dtype=float)))


def semilog_fit(t, v):
    """Slope of log v against t; returns (slope, intercept, r2)."""
    return _linfit(np.asarray(t, dtype=float), np.log(np.asarray(v, dtype=float)))


def _window(t, v, window_decades, min_points):
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=float)
    if t.shape != v.shape or t.ndim != 1:
        raise ValueError("t and v must be 1-D arrays of equal length")
    mask = t >= t[-1] / 10.0**window_decades
    if np.any(v[mask] <= 0) or not np.all(np.isfinite(v[mask])):
        raise InsufficientData("values in the fit window must be positive and finite")
    if mask.sum() < min_points:
        raise InsufficientData(f"need at least {min_points} points in the window, got {int(mask.sum())}")
    return t[mask], v[mask]


def rate_fit(series, window_decades: float = 1.0, min_points: int = 10):
    """Algebraic exponent of a positive series over its trailing ``window_decades``.

    ``series`` is a pair ``(t, v)`` or an iterable of ``(t, v)`` pairs.
    Returns ``(exponent, r2)``.
    """
    t, v = _as_arrays(series)
    tw, vw = _window(t, v, window_decades, min_points)
    slope, _, r2 = loglog_fit(tw, vw)
    return slope, r2


def is_algebraic(series, window_decades=(0.5, 1.0), rel_tol: float = 0.05, min_points: int = 10):
    """Heuristic: the fitted exponent is stable when the window is widened.

    For an exponential the log-log slope keeps growing with the window end.
    """
    t, v = _as_arrays(series)
    slopes = [rate_fit((t, v), w, min_points)[0] for w in window_decades]
    ref = max(abs(s) for s in slopes)
    return bool(ref == 0 or (max(slopes) - min(slopes)) <= rel_tol * ref), slopes


def _as_arrays(series):
    if isinstance(series, tuple) and len(series) == 2 and np.ndim(series[0]) == 1:
        return np.asarray(series[0], dtype=float), np.asarray(series[1], dtype=float)
    arr = np.asarray(list(series), dtype=float)
    return arr[:, 0], arr[:, 1]

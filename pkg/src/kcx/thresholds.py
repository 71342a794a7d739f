"""Empirical-quantile thresholds and per-window logic values."""
from __future__ import annotations

import math

import numpy as np

__all__ = [
    "empirical_threshold",
    "threshold_from_sorted",
    "logic_value",
    "channel_thresholds",
    "cumulative_histogram",
]


def _rank_for(p_t: float, n: int) -> int:
    """Smallest integer k with k / n >= p_t (k may equal n)."""
    k = min(n, max(0, math.ceil(p_t * n)))
    # p_t * n can land one ulp either side of an integer
    while k > 0 and (k - 1) / n >= p_t:
        k -= 1
    while k < n and k / n < p_t:
        k += 1
    return k


def threshold_from_sorted(sorted_values: np.ndarray, p_t: float) -> float:
    """Same as :func:`empirical_threshold` on values that are already sorted ascending."""
    n = sorted_values.size
    if n == 0:
        raise ValueError("cannot threshold an empty sample")
    if not 0.0 <= p_t <= 1.0:
        raise ValueError(f"p_t must be within [0, 1], got {p_t}")
    k = _rank_for(p_t, n)
    if k >= n:
        return float(sorted_values[-1])
    v = sorted_values[k]
    # with ties, fewer than k values may lie strictly below v; move to the next distinct value
    if np.searchsorted(sorted_values, v, side="left") < k:
        nxt = np.searchsorted(sorted_values, v, side="right")
        if nxt >= n:
            return float(sorted_values[-1])
        v = sorted_values[nxt]
    return float(v)


def empirical_threshold(values, p_t: float) -> float:
    """Smallest sample value ``v`` with ``mean(values < v) >= p_t``.

    ``p_t = 0`` gives the minimum. When no sample value qualifies (``p_t``
    above the fraction reachable, e.g. ``p_t = 1``) the maximum is returned,
    so that no value is strictly above the threshold.

    Examples
    --------
    >>> empirical_threshold(range(100), 0.8)
    80.0
    >>> empirical_threshold([5, 5, 5], 0.3)
    5.0
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    return threshold_from_sorted(v, p_t)


def logic_value(f, t):
    """1 where the feature is strictly above its threshold, else 0 (elementwise)."""
    out = np.asarray(f) > np.asarray(t)
    return out.astype(np.uint8) if out.ndim else int(out)


def channel_thresholds(features: np.ndarray, p_ts) -> np.ndarray:
    """Per-channel, per-feature thresholds.

    Parameters
    ----------
    features : ndarray, shape (n_channels, n_windows, n_features)
    p_ts : sequence of float, length n_features

    Returns
    -------
    ndarray, shape (n_channels, n_features)
    """
    features = np.asarray(features)
    p_ts = list(p_ts)
    if features.shape[-1] != len(p_ts):
        raise ValueError(f"{features.shape[-1]} features but {len(p_ts)} p_t values")
    srt = np.sort(features, axis=1)
    out = np.empty((features.shape[0], features.shape[2]))
    for c in range(features.shape[0]):
        for f, p in enumerate(p_ts):
            out[c, f] = threshold_from_sorted(srt[c, :, f], p)
    return out


def cumulative_histogram(values, bins: int = 50):
    """Histogram with its integral probability curve.

    Returns ``(bin_left, count, cumulative_fraction)``; only used for plotting dumps.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    counts, edges = np.histogram(values, bins=bins)
    return edges[:-1], counts, np.cumsum(counts) / max(values.size, 1)

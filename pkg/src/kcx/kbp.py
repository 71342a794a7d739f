"""K-complex Band Power detector.

Each window of each channel gets five features (four band powers and the
amplitude span of the low-passed window). A feature is "on" when it exceeds
its per-channel empirical quantile threshold; a channel flags the window when
any feature is on. Windows flagged by more than ``v_t`` channels are marked,
and runs of marked windows are merged into point events.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_channel_count, check_probability, check_record
from .io import DataError
from .spectral import DEFAULT_BANDS, record_features
from .thresholds import channel_thresholds
from .windows import WindowIndexing, WindowSpec

__all__ = [
    "Detections",
    "channel_flags",
    "vote",
    "coalesce",
    "detect_kbp",
    "KBPDetector",
]


@dataclass(frozen=True)
class Detections:
    """Detected events (seconds, strictly increasing) with their channel support."""

    times: np.ndarray
    support: np.ndarray
    extra: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.times.size

    def to_dict(self) -> dict:
        return {
            "events": [
                {"t": float(t), "support": int(s)} for t, s in zip(self.times, self.support)
            ]
        }

    def __eq__(self, other):
        if not isinstance(other, Detections):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.support, other.support
        )


def channel_flags(features: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """OR of the per-feature logic values, one bit per window.

    Parameters
    ----------
    features : ndarray, shape (n_windows, n_features)
    thresholds : ndarray, shape (n_features,)
    """
    features = np.asarray(features)
    thresholds = np.asarray(thresholds)
    if features.ndim != 2 or features.shape[1] != thresholds.shape[-1]:
        raise ValueError(
            f"features of shape {features.shape} do not match {thresholds.shape[-1]} thresholds"
        )
    return (features > thresholds).any(axis=1).astype(np.uint8)


def vote(flags, v_t: int):
    """Sum channel flags per window and mark windows whose count is strictly above ``v_t``.

    Returns ``(marks, counts)``.
    """
    flags = np.asarray(flags)
    if flags.ndim != 2:
        raise ValueError("flags must be a (n_channels, n_windows) array of equal-length rows")
    counts = flags.sum(axis=0, dtype=np.int64)
    return counts > v_t, counts


def coalesce(marks, indexing: WindowIndexing, gap_windows: int = 4, counts=None) -> Detections:
    """Merge runs of marked windows into events.

    Marked windows separated by at most ``gap_windows`` unmarked windows form
    one run. The event time is the center time at the vote-weighted mean window
    index of the run; support is the largest vote count in the run. Without
    ``counts`` every marked window weighs 1.
    """
    marks = np.asarray(marks, dtype=bool)
    idx = np.flatnonzero(marks)
    if idx.size == 0:
        return Detections(np.empty(0), np.empty(0, dtype=np.int64))
    w = np.ones(idx.size) if counts is None else np.asarray(counts, dtype=np.float64)[idx]
    starts = np.concatenate(([0], np.flatnonzero(np.diff(idx) > gap_windows + 1) + 1))
    mid = np.add.reduceat(idx * w, starts) / np.add.reduceat(w, starts)
    support = np.maximum.reduceat(w, starts).astype(np.int64)
    return Detections(np.asarray(indexing.center_time(mid), dtype=np.float64).reshape(-1), support)


def _validate_params(p_ts, v_t):
    for name, p in zip(("p_t_p1", "p_t_p2", "p_t_p3", "p_t_p4", "p_t_s"), p_ts):
        check_probability(p, name)
    if int(v_t) != v_t or v_t < 0:
        raise ValueError(f"v_t must be a non-negative integer, got {v_t}")


def detect_from_features(features, thresholds, indexing, v_t, gap_windows=4):
    """Flags, vote and coalesce on precomputed features and thresholds."""
    if features.shape[0] <= v_t:
        raise DataError(
            f"v_t={v_t} needs more than {v_t} channels, record has {features.shape[0]}"
        )
    flags = (features > thresholds[:, None, :]).any(axis=2)
    marks, counts = vote(flags, v_t)
    return coalesce(marks, indexing, gap_windows, counts)


class KBPDetector(BaseEstimator):
    """Band-power K-complex detector with per-channel quantile thresholds.

    ``fit`` learns the thresholds from a record; ``predict`` applies them. The
    usual self-calibrating use is ``fit_predict`` on the record being scored.
    Default window is 256 samples with a 26-sample step (1.024 s / 0.1024 s at 250 Hz).

    Parameters
    ----------
    p_t_p1, p_t_p2, p_t_p3, p_t_p4, p_t_s : float
        Quantile levels for the four band powers and the amplitude span.
    v_t : int, default=2
        A window is marked when strictly more than ``v_t`` channels flag it.
    window_length, window_step : int
        Window geometry in samples.
    bands : sequence of BandDef
    cutoff_hz : float, default=10.0
    gap_windows : int, default=4
        Largest run of unmarked windows bridged when coalescing marks.
    sampling_rate_hz : float, optional
        Only used when X is a bare array.
    n_jobs : int, optional
        Threads for feature extraction; results do not depend on it.
    """

    def __init__(self, p_t_p1=0.81, p_t_p2=0.86, p_t_p3=0.98, p_t_p4=0.89, p_t_s=0.7,
                 v_t=2, window_length=256, window_step=26, bands=DEFAULT_BANDS,
                 cutoff_hz=10.0, gap_windows=4, sampling_rate_hz=None, n_jobs=None):
        self.p_t_p1 = p_t_p1
        self.p_t_p2 = p_t_p2
        self.p_t_p3 = p_t_p3
        self.p_t_p4 = p_t_p4
        self.p_t_s = p_t_s
        self.v_t = v_t
        self.window_length = window_length
        self.window_step = window_step
        self.bands = bands
        self.cutoff_hz = cutoff_hz
        self.gap_windows = gap_windows
        self.sampling_rate_hz = sampling_rate_hz
        self.n_jobs = n_jobs

    @property
    def p_ts(self):
        return (self.p_t_p1, self.p_t_p2, self.p_t_p3, self.p_t_p4, self.p_t_s)

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_length, self.window_step)

    def _features(self, record):
        return record_features(record, self.window_spec, self.bands, self.cutoff_hz, self.n_jobs)

    def _fit_features(self, record, feats):
        _validate_params(self.p_ts, self.v_t)
        self.thresholds_ = channel_thresholds(feats, self.p_ts)
        self.n_channels_ = record.n_channels
        self.channel_names_ = record.channel_names
        return self

    def fit(self, X, y=None):
        """Learn per-channel thresholds from X's feature distributions."""
        record = check_record(X, self.sampling_rate_hz)
        feats, _ = self._features(record)
        return self._fit_features(record, feats)

    def decision_function(self, X):
        """Per-window channel vote counts, shape (n_windows,)."""
        check_is_fitted(self, "thresholds_")
        record = check_record(X, self.sampling_rate_hz)
        check_channel_count(record, self.n_channels_)
        feats, _ = self._features(record)
        return (feats > self.thresholds_[:, None, :]).any(axis=2).sum(axis=0)

    def predict(self, X) -> Detections:
        check_is_fitted(self, "thresholds_")
        record = check_record(X, self.sampling_rate_hz)
        check_channel_count(record, self.n_channels_)
        feats, indexing = self._features(record)
        return detect_from_features(feats, self.thresholds_, indexing, self.v_t, self.gap_windows)

    def fit_predict(self, X, y=None) -> Detections:
        record = check_record(X, self.sampling_rate_hz)
        feats, indexing = self._features(record)
        self._fit_features(record, feats)
        return detect_from_features(feats, self.thresholds_, indexing, self.v_t, self.gap_windows)


def detect_kbp(record, **params) -> Detections:
    """Self-calibrated KBP detection on one record (``KBPDetector(**params).fit_predict``)."""
    return KBPDetector(**params).fit_predict(record)

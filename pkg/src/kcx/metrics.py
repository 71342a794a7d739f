"""Event matching and detection quality metrics (TPR, FPR, PPV)."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

__all__ = [
    "ConfusionCounts",
    "MatchSpec",
    "match_events",
    "count_tn",
    "tpr",
    "fpr",
    "ppv",
    "evaluate",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative, got {v}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    def to_dict(self) -> dict:
        return {
            **asdict(self),
            "tpr_pct": tpr(self),
            "fpr_pct": fpr(self),
            "ppv_pct": ppv(self),
        }


@dataclass(frozen=True)
class MatchSpec:
    tolerance_s: float = 0.5
    tn_interval_s: float = 1.0

    def __post_init__(self):
        if not self.tolerance_s > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance_s}")
        if not self.tn_interval_s > 0:
            raise ValueError(f"TN interval must be positive, got {self.tn_interval_s}")


def _times(events) -> np.ndarray:
    ev = getattr(events, "events", None)
    if ev is None:
        ev = getattr(events, "times", events)
    return np.sort(np.asarray(ev, dtype=np.float64).ravel())


def match_pairs(detections, truth, tolerance_s: float = 0.5) -> list[tuple[int, int]]:
    """One-to-one matching of maximum size as (truth_index, detection_index) pairs.

    Truth events are visited in time order and each takes the earliest free
    detection within ``tolerance_s`` (inclusive). Because every acceptance
    interval has the same width, this yields a maximum-cardinality matching.
    """
    det = _times(detections)
    tru = _times(truth)
    pairs = []
    j = 0
    for i, t in enumerate(tru):
        while j < det.size and det[j] < t - tolerance_s:
            j += 1
        if j < det.size and det[j] <= t + tolerance_s:
            pairs.append((i, j))
            j += 1
    return pairs


def match_events(detections, truth, spec: MatchSpec = MatchSpec()) -> ConfusionCounts:
    """TP/FP/FN from a maximum one-to-one matching (``tn`` left at 0)."""
    n_det = _times(detections).size
    n_tru = _times(truth).size
    tp = len(match_pairs(detections, truth, spec.tolerance_s))
    return ConfusionCounts(tp=tp, fp=n_det - tp, fn=n_tru - tp)


def count_tn(duration_s: float, detections, truth, spec: MatchSpec = MatchSpec()) -> int:
    """Number of whole intervals ``[k, k+1)`` (in units of ``tn_interval_s``) holding no event."""
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n = int(np.floor(duration_s / spec.tn_interval_s))
    ev = np.concatenate([_times(detections), _times(truth)])
    occupied = np.unique(np.floor(ev / spec.tn_interval_s).astype(np.int64))
    occupied = occupied[(occupied >= 0) & (occupied < n)]
    return n - occupied.size


def _pct(num: int, den: int):
    # None marks an undefined ratio; callers must not read it as 0
    return None if den == 0 else 100.0 * num / den


def tpr(c: ConfusionCounts):
    """TP / (TP + FN) in percent, or None when undefined."""
    return _pct(c.tp, c.tp + c.fn)


def fpr(c: ConfusionCounts):
    """FP / (FP + TN) in percent, or None when undefined."""
    return _pct(c.fp, c.fp + c.tn)


def ppv(c: ConfusionCounts):
    """TP / (TP + FP) in percent, or None when undefined."""
    return _pct(c.tp, c.tp + c.fp)


def evaluate(detections, truth, duration_s: float, spec: MatchSpec = MatchSpec()) -> ConfusionCounts:
    """Full confusion counts for one record."""
    c = match_events(detections, truth, spec)
    return ConfusionCounts(c.tp, c.fp, c.fn, count_tn(duration_s, detections, truth, spec))

"""Exhaustive grid search over the six KBP tuning values.

Features are parameter independent, so they are computed once per record.
For each feature and each candidate quantile level the per-channel logic bits
are precomputed and packed into one integer word per window (bit ``c`` set
when channel ``c`` is on). A grid point then costs five ORs, a popcount,
coalescing and matching.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._validation import check_annotations, check_record, resolve_n_jobs
from .kbp import KBPDetector, coalesce
from .metrics import ConfusionCounts, MatchSpec, count_tn, fpr, match_events, ppv, tpr
from .spectral import DEFAULT_BANDS, record_features
from .thresholds import threshold_from_sorted
from .windows import WindowSpec

__all__ = ["ParamGrid", "TuneResult", "grid_search", "KBPGridSearch", "PARAM_NAMES"]

PARAM_NAMES = ("p_t_p1", "p_t_p2", "p_t_p3", "p_t_p4", "p_t_s", "v_t")


def _default_p():
    return tuple(round(0.70 + 0.02 * i, 2) for i in range(15))


@dataclass(frozen=True)
class ParamGrid:
    p_t_p1: tuple = field(default_factory=_default_p)
    p_t_p2: tuple = field(default_factory=_default_p)
    p_t_p3: tuple = field(default_factory=_default_p)
    p_t_p4: tuple = field(default_factory=_default_p)
    p_t_s: tuple = field(default_factory=_default_p)
    v_t: tuple = (0, 1, 2, 3, 4, 5)

    def __post_init__(self):
        for name in PARAM_NAMES:
            vals = tuple(getattr(self, name))
            if not vals:
                raise ValueError(f"grid list {name} is empty")
            if name == "v_t":
                if any(int(v) != v or v < 0 for v in vals):
                    raise ValueError("v_t values must be non-negative integers")
                vals = tuple(int(v) for v in vals)
            elif any(not 0.0 <= v <= 1.0 for v in vals):
                raise ValueError(f"{name} values must lie in [0, 1]")
            object.__setattr__(self, name, vals)

    @classmethod
    def from_dict(cls, d: dict) -> "ParamGrid":
        unknown = set(d) - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in PARAM_NAMES}

    @property
    def size(self) -> int:
        return int(np.prod([len(getattr(self, k)) for k in PARAM_NAMES]))

    def __iter__(self):
        """Combinations in grid order (last parameter varies fastest)."""
        for combo in itertools.product(*(getattr(self, k) for k in PARAM_NAMES)):
            yield dict(zip(PARAM_NAMES, combo))


@dataclass
class TuneResult:
    best_params: dict
    achieved: dict
    counts: ConfusionCounts
    evaluated_count: int
    feasible: bool
    constraint_tpr_pct: float
    trace: list | None = None

    def to_dict(self) -> dict:
        out = {
            "feasible": self.feasible,
            "best_params": self.best_params,
            "achieved": self.achieved,
            "counts": {k: v for k, v in self.counts.to_dict().items() if not k.endswith("_pct")},
            "evaluated_count": self.evaluated_count,
            "constraint_tpr_pct": self.constraint_tpr_pct,
        }
        if self.trace is not None:
            out["trace"] = self.trace
        return out


class _RecordCache:
    """Per-record packed logic words for every (feature, p value) in the grid."""

    def __init__(self, record, truth, grid: ParamGrid, window, bands, cutoff_hz, n_jobs):
        feats, self.indexing = record_features(record, window, bands, cutoff_hz, n_jobs)
        self.n_channels = record.n_channels
        self.duration_s = record.duration_s
        self.truth = truth.events
        n_words = -(-self.n_channels // 64)
        srt = np.sort(feats, axis=1)
        self.words = []
        for f, name in enumerate(PARAM_NAMES[:5]):
            per_p = {}
            for p in getattr(grid, name):
                w = np.zeros((feats.shape[1], n_words), dtype=np.uint64)
                for c in range(self.n_channels):
                    t = threshold_from_sorted(srt[c, :, f], p)
                    bit = np.uint64(1) << np.uint64(c % 64)
                    w[feats[c, :, f] > t, c // 64] |= bit
                per_p[p] = w
            self.words.append(per_p)

    def counts_for(self, ps) -> np.ndarray:
        w = self.words[0][ps[0]] | self.words[1][ps[1]]
        w |= self.words[2][ps[2]]
        w |= self.words[3][ps[3]]
        w |= self.words[4][ps[4]]
        return np.bitwise_count(w).sum(axis=1, dtype=np.int64)

    def confusion(self, counts, v_t, gap_windows, match) -> ConfusionCounts:
        if self.n_channels <= v_t:
            raise ValueError(f"v_t={v_t} needs more than {v_t} channels")
        det = coalesce(counts > v_t, self.indexing, gap_windows, counts)
        c = match_events(det.times, self.truth, match)
        return ConfusionCounts(c.tp, c.fp, c.fn, count_tn(self.duration_s, det.times, self.truth, match))


def _score_key(c: ConfusionCounts):
    def nz(v, default):
        return default if v is None else v
    return (nz(ppv(c), -1.0), nz(tpr(c), -1.0), -nz(fpr(c), 101.0))


def select_best(results: Sequence[ConfusionCounts], constraint_tpr_pct: float = 99.0):
    """Index of the winning combination and whether it meets the TPR constraint.

    Feasible combinations (TPR >= constraint) compete on PPV, then TPR, then
    lower FPR; remaining ties go to the earliest index. Without any feasible
    combination the highest TPR wins (then PPV, then lower FPR).
    """
    if not results:
        raise ValueError("no results to select from")
    best_i, best_key = None, None
    for i, c in enumerate(results):
        t = tpr(c)
        if t is not None and t >= constraint_tpr_pct:
            key = _score_key(c)
            if best_key is None or key > best_key:
                best_i, best_key = i, key
    if best_i is not None:
        return best_i, True
    for i, c in enumerate(results):
        k = _score_key(c)
        key = (k[1], k[0], k[2])
        if best_key is None or key > best_key:
            best_i, best_key = i, key
    return best_i, False


def _evaluate_chunk(caches, p_combos, v_ts, gap_windows, match):
    out = []
    for ps in p_combos:
        per_record = [cache.counts_for(ps) for cache in caches]
        for v in v_ts:
            total = ConfusionCounts()
            for cache, counts in zip(caches, per_record):
                total = total + cache.confusion(counts, v, gap_windows, match)
            out.append(total)
    return out


def grid_search(
    dataset: Sequence,
    grid: ParamGrid = ParamGrid(),
    constraint_tpr_pct: float = 99.0,
    window: WindowSpec = WindowSpec(),
    bands=DEFAULT_BANDS,
    cutoff_hz: float = 10.0,
    gap_windows: int = 4,
    match: MatchSpec = MatchSpec(),
    n_jobs: int | None = 1,
    keep_trace: bool = False,
) -> TuneResult:
    """Evaluate every grid combination on pooled counts and pick the best.

    The winner maximises PPV among combinations with TPR >= the constraint;
    ties go to higher TPR, then lower FPR, then grid order. When nothing
    meets the constraint the result is flagged infeasible and holds the
    highest-TPR combination (ties broken the same way).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    if grid.size == 0:
        raise ValueError("grid is empty")
    jobs = resolve_n_jobs(n_jobs)
    caches = [
        _RecordCache(check_record(rec), check_annotations(truth), grid, window, bands, cutoff_hz, jobs)
        for rec, truth in dataset
    ]
    p_combos = list(itertools.product(*(getattr(grid, k) for k in PARAM_NAMES[:5])))
    v_ts = grid.v_t

    if jobs == 1 or len(p_combos) < 2 * jobs:
        results = _evaluate_chunk(caches, p_combos, v_ts, gap_windows, match)
    else:
        n_chunks = min(len(p_combos), jobs * 4)
        bounds = np.linspace(0, len(p_combos), n_chunks + 1).astype(int)
        parts = Parallel(n_jobs=jobs, backend="threading")(
            delayed(_evaluate_chunk)(caches, p_combos[a:b], v_ts, gap_windows, match)
            for a, b in zip(bounds[:-1], bounds[1:])
        )
        results = [c for part in parts for c in part]

    combos = [dict(zip(PARAM_NAMES, (*ps, v))) for ps in p_combos for v in v_ts]
    best_i, feasible = select_best(results, constraint_tpr_pct)
    best = results[best_i]
    trace = None
    if keep_trace:
        trace = [
            {"params": combos[i], "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
             "tpr_pct": tpr(c), "ppv_pct": ppv(c), "fpr_pct": fpr(c)}
            for i, c in enumerate(results)
        ]
    return TuneResult(
        best_params=combos[best_i],
        achieved={"tpr_pct": tpr(best), "ppv_pct": ppv(best), "fpr_pct": fpr(best)},
        counts=best,
        evaluated_count=len(results),
        feasible=feasible,
        constraint_tpr_pct=float(constraint_tpr_pct),
        trace=trace,
    )


class KBPGridSearch(BaseEstimator):
    """Estimator wrapper around :func:`grid_search`.

    ``fit(records, annotations)`` runs the search; ``best_estimator_`` is a
    :class:`KBPDetector` carrying the selected tuning values.
    """

    def __init__(self, grid=None, constraint_tpr_pct=99.0, window_length=256, window_step=26,
                 bands=DEFAULT_BANDS, cutoff_hz=10.0, gap_windows=4, tolerance_s=0.5,
                 n_jobs=None, keep_trace=False):
        self.grid = grid
        self.constraint_tpr_pct = constraint_tpr_pct
        self.window_length = window_length
        self.window_step = window_step
        self.bands = bands
        self.cutoff_hz = cutoff_hz
        self.gap_windows = gap_windows
        self.tolerance_s = tolerance_s
        self.n_jobs = n_jobs
        self.keep_trace = keep_trace

    def fit(self, X, y):
        if len(X) != len(y):
            raise ValueError(f"{len(X)} records but {len(y)} annotation sets")
        grid = self.grid if self.grid is not None else ParamGrid()
        if isinstance(grid, dict):
            grid = ParamGrid.from_dict(grid)
        self.result_ = grid_search(
            list(zip(X, y)), grid, self.constraint_tpr_pct,
            WindowSpec(self.window_length, self.window_step), self.bands, self.cutoff_hz,
            self.gap_windows, MatchSpec(self.tolerance_s), self.n_jobs, self.keep_trace,
        )
        self.best_params_ = self.result_.best_params
        self.best_estimator_ = KBPDetector(
            **self.best_params_, window_length=self.window_length, window_step=self.window_step,
            bands=self.bands, cutoff_hz=self.cutoff_hz, gap_windows=self.gap_windows,
            n_jobs=self.n_jobs,
        )
        return self

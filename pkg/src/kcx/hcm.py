"""Harmonic Coordinate Matching detector.

Each window is a point whose coordinates are its powers at a few FFT bins.
The space is cut into boxes whose edges grow geometrically away from zero:
along one axis, index 0 covers ``[0, floor)`` and index ``k >= 1`` covers
``[floor * base**(k-1), floor * base**k)``. Calibration stores the boxes hit
by windows centred on annotated events. Detection keeps a window when its box
is stored and at least one of its harmonic powers exceeds that harmonic's
``p_t`` quantile over the channel.
"""
from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_annotations, check_probability, check_record, resolve_n_jobs
from .io import DataError
from .kbp import Detections, coalesce, vote
from .spectral import PowerSpectrum, window_spectra
from .thresholds import empirical_threshold
from .windows import WindowSpec, make_windows

__all__ = [
    "HarmonicSpaceSpec",
    "BoxStore",
    "default_harmonic_bins",
    "harmonic_point",
    "box_index",
    "box_indices",
    "calibrate_hcm",
    "detect_hcm",
    "HCMDetector",
]

ESSENTIAL_HZ = (1.0, 2.0, 3.0, 4.0, 7.0)


def default_harmonic_bins(window_length: int = 256, sampling_rate_hz: float = 250.0,
                          freqs_hz=ESSENTIAL_HZ) -> tuple[int, ...]:
    """FFT bins whose center frequencies are nearest to ``freqs_hz``."""
    width = sampling_rate_hz / window_length
    bins = tuple(int(round(f / width)) for f in freqs_hz)
    if len(set(bins)) != len(bins):
        raise ValueError(f"frequencies {freqs_hz} collapse onto bins {bins}")
    return bins


@dataclass(frozen=True)
class HarmonicSpaceSpec:
    harmonic_bins: tuple
    log_base: float = 2.0
    linear_floor: tuple | None = None  # one per bin; None until calibrated

    def __post_init__(self):
        bins = tuple(int(b) for b in self.harmonic_bins)
        if not bins:
            raise ValueError("at least one harmonic bin is required")
        if len(set(bins)) != len(bins) or min(bins) < 0:
            raise ValueError(f"harmonic bins must be distinct and non-negative: {bins}")
        if not self.log_base > 1:
            raise ValueError(f"log_base must exceed 1, got {self.log_base}")
        object.__setattr__(self, "harmonic_bins", bins)
        if self.linear_floor is not None:
            floor = np.broadcast_to(np.asarray(self.linear_floor, dtype=np.float64), (len(bins),))
            if not np.all(floor > 0):
                raise ValueError("linear_floor values must be positive")
            object.__setattr__(self, "linear_floor", tuple(float(f) for f in floor))

    @property
    def dim(self) -> int:
        return len(self.harmonic_bins)

    def to_dict(self) -> dict:
        return {
            "bins": list(self.harmonic_bins),
            "log_base": self.log_base,
            "linear_floor": None if self.linear_floor is None else list(self.linear_floor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HarmonicSpaceSpec":
        return cls(tuple(d["bins"]), float(d["log_base"]), d.get("linear_floor"))


def harmonic_point(spectrum: PowerSpectrum, spec: HarmonicSpaceSpec) -> tuple:
    powers = spectrum.bin_powers
    if max(spec.harmonic_bins) >= powers.size:
        raise ValueError(f"bin {max(spec.harmonic_bins)} outside a spectrum of {powers.size} bins")
    return tuple(float(powers[b]) for b in spec.harmonic_bins)


def box_indices(points, spec: HarmonicSpaceSpec) -> np.ndarray:
    """Vectorised :func:`box_index` over rows of ``points`` (shape (n, dim))."""
    if spec.linear_floor is None:
        raise ValueError("spec has no linear_floor; calibrate first or set it explicitly")
    pts = np.asarray(points, dtype=np.float64)
    if np.any(pts < 0):
        raise ValueError("box coordinates must be non-negative")
    floor = np.asarray(spec.linear_floor)
    base = spec.log_base
    with np.errstate(divide="ignore"):
        ratio = pts / floor
        k = np.floor(np.log(ratio) / np.log(base))
    k = np.where(ratio >= 1, k, 0)
    # log rounding can land one step off near exact powers of the base
    k += (base ** (k + 1) <= ratio) & (ratio >= 1)
    k -= (base ** k > ratio) & (ratio >= 1)
    return np.where(ratio < 1, 0, k + 1).astype(np.int64)


def box_index(point, spec: HarmonicSpaceSpec) -> tuple:
    """Box coordinates of one point: 0 below ``linear_floor``, else ``1 + floor(log_base(x / floor))``."""
    pt = np.asarray(point, dtype=np.float64)
    if pt.shape != (spec.dim,):
        raise ValueError(f"point has {pt.size} coordinates, space has {spec.dim}")
    return tuple(int(v) for v in box_indices(pt[None, :], spec)[0])


@dataclass(frozen=True)
class BoxStore:
    boxes: frozenset
    spec: HarmonicSpaceSpec
    provenance: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.boxes)

    def __contains__(self, box) -> bool:
        return tuple(box) in self.boxes

    def contains_rows(self, indices: np.ndarray) -> np.ndarray:
        """Membership of each row of an (n, dim) box-index array."""
        if indices.shape[0] == 0:
            return np.zeros(0, dtype=bool)
        uniq, inverse = np.unique(indices, axis=0, return_inverse=True)
        hit = np.array([tuple(r) in self.boxes for r in uniq.tolist()], dtype=bool)
        return hit[inverse.ravel()]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "boxes": sorted(list(b) for b in self.boxes),
            "provenance": self.provenance,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "BoxStore":
        try:
            spec = HarmonicSpaceSpec.from_dict(d["spec"])
            boxes = frozenset(tuple(int(v) for v in b) for b in d["boxes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed box store: {exc}") from exc
        if any(len(b) != spec.dim for b in boxes):
            raise DataError("box store holds boxes of the wrong dimension")
        return cls(boxes, spec, dict(d.get("provenance", {})))

    @classmethod
    def load(cls, path) -> "BoxStore":
        path = Path(path)
        try:
            return cls.from_dict(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: line {exc.lineno}: malformed JSON ({exc.msg})") from exc


def _channel_points(record, indexing, bins, channels, n_jobs):
    jobs = resolve_n_jobs(n_jobs)

    def work(c):
        return window_spectra(record.samples[c], indexing, bins)

    if jobs == 1 or len(channels) == 1:
        return [work(c) for c in channels]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(work, channels))


def _resolve_channels(record, channels):
    if channels is None:
        return list(range(record.n_channels))
    out = []
    for ch in channels:
        if isinstance(ch, str):
            if ch not in record.channel_names:
                raise DataError(f"unknown channel {ch!r}")
            out.append(record.channel_names.index(ch))
        else:
            out.append(int(ch))
    return out


def calibrate_hcm(record, annotations, spec: HarmonicSpaceSpec | None = None,
                  window: WindowSpec = WindowSpec(), channels=None,
                  floor_quantile: float = 0.10, record_id: str | None = None,
                  n_jobs=1) -> BoxStore:
    """Collect the boxes of windows centred nearest each annotated event.

    Every channel (or the ``channels`` subset) contributes one box per event.
    When ``spec.linear_floor`` is unset it is taken per harmonic as the
    ``floor_quantile`` empirical quantile of the non-zero calibration powers.
    Events further than half a step from any window centre are skipped and
    counted in ``provenance["skipped"]``.
    """
    annotations = check_annotations(annotations)
    if len(annotations) == 0:
        raise DataError("calibration needs at least one annotation")
    indexing = make_windows(record, window)
    if spec is None:
        spec = HarmonicSpaceSpec(default_harmonic_bins(window.length_samples, record.sampling_rate_hz))
    if max(spec.harmonic_bins) > window.length_samples // 2:
        raise ValueError(f"bin {max(spec.harmonic_bins)} outside the window spectrum")
    chans = _resolve_channels(record, channels)
    points = _channel_points(record, indexing, spec.harmonic_bins, chans, n_jobs)

    if spec.linear_floor is None:
        pooled = np.concatenate(points, axis=0)
        floors = []
        for j in range(spec.dim):
            nz = pooled[:, j][pooled[:, j] > 0]
            if nz.size == 0:
                raise DataError(f"harmonic bin {spec.harmonic_bins[j]} has no non-zero power")
            floors.append(empirical_threshold(nz, floor_quantile))
        spec = HarmonicSpaceSpec(spec.harmonic_bins, spec.log_base, tuple(floors))

    half_step = window.step_samples / (2 * record.sampling_rate_hz)
    rows, skipped = [], 0
    for t in annotations:
        w = indexing.nearest(t)
        if abs(indexing.center_time(w) - t) > half_step:
            skipped += 1
            continue
        rows.extend(p[w] for p in points)
    if skipped:
        warnings.warn(f"{skipped} annotation(s) outside the window centre range were skipped")
    boxes = frozenset()
    if rows:
        boxes = frozenset(map(tuple, box_indices(np.array(rows), spec).tolist()))
    provenance = {
        "record_ids": [record_id] if record_id else [],
        "annotations_used": len(annotations) - skipped,
        "skipped": skipped,
        "channels": [record.channel_names[c] for c in chans],
        "window": window.to_dict(),
        "sampling_rate_hz": record.sampling_rate_hz,
        "floor_quantile": floor_quantile,
    }
    return BoxStore(boxes, spec, provenance)


def _check_store_window(store: BoxStore, window: WindowSpec):
    recorded = store.provenance.get("window")
    if recorded and WindowSpec(**recorded) != window:
        raise DataError(f"box store was calibrated with window {recorded}, got {window.to_dict()}")


def hcm_flags(record, store: BoxStore, p_t: float = 0.80, window: WindowSpec = WindowSpec(),
              n_jobs=1):
    """Per-channel window flags, shape (n_channels, n_windows), plus the window indexing.

    ``p_t = 0`` disables the power condition, leaving box membership only.
    """
    if len(store) == 0:
        raise DataError("box store is empty")
    check_probability(p_t, "p_t")
    _check_store_window(store, window)
    indexing = make_windows(record, window)
    points = _channel_points(record, indexing, store.spec.harmonic_bins,
                             list(range(record.n_channels)), n_jobs)
    flags = np.empty((record.n_channels, indexing.window_count), dtype=bool)
    for c, pts in enumerate(points):
        ok = store.contains_rows(box_indices(pts, store.spec))
        if p_t > 0:
            thr = np.array([empirical_threshold(pts[:, j], p_t) for j in range(store.spec.dim)])
            ok &= (pts > thr).any(axis=1)
        flags[c] = ok
    return flags, indexing


def detect_hcm(record, store: BoxStore, p_t: float = 0.80, window: WindowSpec = WindowSpec(),
               v_t: int = 0, gap_windows: int = 4, n_jobs=1) -> Detections:
    """Box-membership + power-condition detection, then the KBP vote and coalesce."""
    if record.n_channels <= v_t:
        raise DataError(f"v_t={v_t} needs more than {v_t} channels")
    flags, indexing = hcm_flags(record, store, p_t, window, n_jobs)
    marks, counts = vote(flags, v_t)
    return coalesce(marks, indexing, gap_windows, counts)


class HCMDetector(BaseEstimator):
    """Harmonic Coordinate Matching as an estimator.

    ``fit(X, y)`` calibrates a box store from record ``X`` and its event times
    ``y``; ``predict(X)`` detects on another (or the same) record.

    Parameters
    ----------
    p_t : float, default=0.80
        Quantile level of the power condition; 0 disables it.
    harmonic_bins : tuple of int, optional
        Defaults to the bins nearest 1, 2, 3, 4 and 7 Hz.
    log_base : float, default=2.0
    linear_floor : float or tuple, optional
        Defaults to the 10th-percentile non-zero calibration power per bin.
    v_t : int, default=0
    calibration_channels : sequence, optional
        Channel names or indices used for calibration (default all).
    """

    def __init__(self, p_t=0.80, harmonic_bins=None, log_base=2.0, linear_floor=None,
                 floor_quantile=0.10, v_t=0, window_length=256, window_step=26,
                 gap_windows=4, calibration_channels=None, sampling_rate_hz=None, n_jobs=None):
        self.p_t = p_t
        self.harmonic_bins = harmonic_bins
        self.log_base = log_base
        self.linear_floor = linear_floor
        self.floor_quantile = floor_quantile
        self.v_t = v_t
        self.window_length = window_length
        self.window_step = window_step
        self.gap_windows = gap_windows
        self.calibration_channels = calibration_channels
        self.sampling_rate_hz = sampling_rate_hz
        self.n_jobs = n_jobs

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_length, self.window_step)

    def fit(self, X, y):
        record = check_record(X, self.sampling_rate_hz)
        bins = self.harmonic_bins
        if bins is None:
            bins = default_harmonic_bins(self.window_length, record.sampling_rate_hz)
        spec = HarmonicSpaceSpec(bins, self.log_base, self.linear_floor)
        self.store_ = calibrate_hcm(record, y, spec, self.window_spec,
                                    self.calibration_channels, self.floor_quantile,
                                    n_jobs=self.n_jobs)
        return self

    def predict(self, X) -> Detections:
        check_is_fitted(self, "store_")
        record = check_record(X, self.sampling_rate_hz)
        return detect_hcm(record, self.store_, self.p_t, self.window_spec, self.v_t,
                          self.gap_windows, self.n_jobs)

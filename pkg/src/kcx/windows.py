"""Sliding-window bookkeeping in the sample domain."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .io import DataError

__all__ = ["WindowSpec", "WindowIndexing", "make_windows", "seconds_to_samples"]


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def seconds_to_samples(seconds: float, sampling_rate_hz: float) -> int:
    """Convert a duration to samples, rounding half up (0.1024 s at 250 Hz -> 26)."""
    return int(math.floor(seconds * sampling_rate_hz + 0.5))


@dataclass(frozen=True)
class WindowSpec:
    length_samples: int = 256
    step_samples: int = 26

    def __post_init__(self):
        length, step = int(self.length_samples), int(self.step_samples)
        if length != self.length_samples or step != self.step_samples:
            raise DataError("window length and step must be integers")
        if not _is_pow2(length):
            raise DataError(f"window length must be a power of two, got {length}")
        if step < 1 or step > length:
            raise DataError(f"window step must be in [1, {length}], got {step}")

    @classmethod
    def from_seconds(cls, length_s: float, step_s: float, sampling_rate_hz: float) -> "WindowSpec":
        return cls(
            seconds_to_samples(length_s, sampling_rate_hz),
            seconds_to_samples(step_s, sampling_rate_hz),
        )

    def to_dict(self) -> dict:
        return {"length_samples": self.length_samples, "step_samples": self.step_samples}


@dataclass(frozen=True)
class WindowIndexing:
    """Window layout over a record: window ``i`` covers ``[i*step, i*step + length)``."""

    window_count: int
    spec: WindowSpec
    sampling_rate_hz: float

    def start(self, i):
        return np.asarray(i) * self.spec.step_samples

    def center_time(self, i):
        """Time in seconds of the center sample of window ``i`` (``i`` may be fractional)."""
        i = np.asarray(i, dtype=np.float64)
        t = (i * self.spec.step_samples + self.spec.length_samples / 2) / self.sampling_rate_hz
        return float(t) if t.ndim == 0 else t

    @property
    def center_times(self) -> np.ndarray:
        return self.center_time(np.arange(self.window_count))

    def nearest(self, t: float) -> int:
        """Index of the window whose center is nearest to ``t`` seconds."""
        fs = self.sampling_rate_hz
        pos = (t * fs - self.spec.length_samples / 2) / self.spec.step_samples
        return int(np.clip(np.rint(pos), 0, self.window_count - 1))

    def view(self, x: np.ndarray) -> np.ndarray:
        """Strided (window_count, length) view of a 1-D signal; no copy."""
        return sliding_window_view(x, self.spec.length_samples)[:: self.spec.step_samples][
            : self.window_count
        ]


def make_windows(record_or_length, spec: WindowSpec, sampling_rate_hz: float | None = None) -> WindowIndexing:
    """Lay out fully contained windows over a record; the trailing partial window is dropped.

    ``record_or_length`` is an :class:`~kcx.io.EegRecord` or a sample count (in
    which case ``sampling_rate_hz`` is required).
    """
    if isinstance(record_or_length, (int, np.integer)):
        n = int(record_or_length)
        if sampling_rate_hz is None:
            raise ValueError("sampling_rate_hz is required with a bare sample count")
        fs = float(sampling_rate_hz)
    else:
        n = record_or_length.n_samples
        fs = record_or_length.sampling_rate_hz
    if n < spec.length_samples:
        raise DataError(
            f"record of {n} samples is shorter than one window ({spec.length_samples} samples)"
        )
    count = (n - spec.length_samples) // spec.step_samples + 1
    return WindowIndexing(count, spec, fs)

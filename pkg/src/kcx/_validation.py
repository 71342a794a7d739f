"""Input validation helpers shared by the estimators."""
from __future__ import annotations

import os

import numpy as np
from sklearn.utils import check_array

from .io import AnnotationSet, DataError, EegRecord


def check_record(X, sampling_rate_hz=None, channel_names=None) -> EegRecord:
    """Coerce ``X`` to an :class:`EegRecord`.

    ``X`` may already be a record, or a 2-D array-like of shape
    (n_channels, n_samples), in which case ``sampling_rate_hz`` is required.
    """
    if isinstance(X, EegRecord):
        return X
    if sampling_rate_hz is None:
        raise ValueError("sampling_rate_hz is required when X is not an EegRecord")
    data = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if channel_names is None:
        channel_names = [f"ch{i:02d}" for i in range(data.shape[0])]
    return EegRecord(channel_names, sampling_rate_hz, data)


def check_annotations(y) -> AnnotationSet:
    if isinstance(y, AnnotationSet):
        return y
    if y is None:
        raise ValueError("annotations are required")
    return AnnotationSet(np.asarray(y, dtype=np.float64))


def check_probability(value, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be within [0, 1], got {value}")
    return value


def check_channel_count(record: EegRecord, expected: int) -> None:
    if record.n_channels != expected:
        raise DataError(
            f"record has {record.n_channels} channels, estimator was fitted on {expected}"
        )


def resolve_n_jobs(n_jobs) -> int:
    """``None`` falls back to $KCX_THREADS, then to the logical core count."""
    if n_jobs is None:
        env = os.environ.get("KCX_THREADS")
        if env:
            try:
                n_jobs = int(env)
            except ValueError:
                raise ValueError(f"KCX_THREADS must be an integer, got {env!r}") from None
        else:
            n_jobs = os.cpu_count() or 1
    n_jobs = int(n_jobs)
    if n_jobs < 0:
        n_jobs = max(1, (os.cpu_count() or 1) + 1 + n_jobs)
    return max(1, n_jobs)

"""Per-window spectra, band powers, low-pass reconstruction and amplitude span.

Power spectra are one-sided with Parseval normalisation: the bins of a window
sum to the mean squared sample value. No taper is applied. A bin belongs to a
band when its center frequency ``k * fs / N`` lies in ``[lo, hi]`` (both ends
inclusive).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_record, resolve_n_jobs
from .io import DataError
from .windows import WindowIndexing, WindowSpec, make_windows

__all__ = [
    "BandDef",
    "DEFAULT_BANDS",
    "FEATURE_NAMES",
    "PowerSpectrum",
    "FeatureFrame",
    "power_spectrum",
    "band_power",
    "lowpass_reconstruct",
    "amplitude_span",
    "feature_frame",
    "window_spectra",
    "channel_features",
    "record_features",
    "FeatureExtractor",
]

FEATURE_NAMES = ("p1", "p2", "p3", "p4", "s")

# windows per FFT batch; bounds transient memory on multi-hour records
_CHUNK = 4096


@dataclass(frozen=True)
class BandDef:
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not self.lo_hz < self.hi_hz:
            raise ValueError(f"band needs lo < hi, got [{self.lo_hz}, {self.hi_hz}]")
        if self.lo_hz < 0:
            raise ValueError(f"band starts below 0 Hz: {self.lo_hz}")


DEFAULT_BANDS = (BandDef(0.0, 3.5), BandDef(1.0, 4.5), BandDef(2.0, 5.5), BandDef(3.0, 6.5))


@dataclass(frozen=True)
class PowerSpectrum:
    bin_powers: np.ndarray
    bin_width_hz: float

    @property
    def n_fft(self) -> int:
        return 2 * (self.bin_powers.size - 1)

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(self.bin_powers.size) * self.bin_width_hz


@dataclass(frozen=True)
class FeatureFrame:
    p1: float
    p2: float
    p3: float
    p4: float
    s: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3, self.p4, self.s])


def _check_window(window) -> np.ndarray:
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("window must be one-dimensional")
    n = x.size
    if n < 2 or n & (n - 1):
        raise ValueError(f"window length must be a power of two, got {n}")
    return x


def _onesided_scale(n: int) -> np.ndarray:
    scale = np.full(n // 2 + 1, 2.0 / n**2)
    scale[0] = scale[-1] = 1.0 / n**2
    return scale


def _spectrum_from_rfft(coefs: np.ndarray, n: int) -> np.ndarray:
    return (coefs.real**2 + coefs.imag**2) * _onesided_scale(n)


def power_spectrum(window, sampling_rate_hz: float = 250.0) -> PowerSpectrum:
    """One-sided power spectrum of a power-of-two length window.

    Examples
    --------
    >>> n = np.arange(256)
    >>> ps = power_spectrum(np.cos(2 * np.pi * 3 * n / 256))
    >>> round(float(ps.bin_powers[3]), 12), round(float(ps.bin_powers.sum()), 12)
    (0.5, 0.5)
    """
    x = _check_window(window)
    return PowerSpectrum(_spectrum_from_rfft(np.fft.rfft(x), x.size), sampling_rate_hz / x.size)


def band_bins(band: BandDef, n_fft: int, sampling_rate_hz: float) -> np.ndarray:
    """Boolean mask over the ``n_fft // 2 + 1`` one-sided bins selecting ``band``."""
    nyquist = sampling_rate_hz / 2
    if band.hi_hz > nyquist or band.lo_hz < 0:
        raise ValueError(f"band [{band.lo_hz}, {band.hi_hz}] Hz exceeds [0, {nyquist}] Hz")
    freqs = np.arange(n_fft // 2 + 1) * sampling_rate_hz / n_fft
    return (freqs >= band.lo_hz) & (freqs <= band.hi_hz)


def band_power(spec: PowerSpectrum, band: BandDef) -> float:
    """Sum of bin powers whose center frequency lies inside ``band``."""
    fs = spec.bin_width_hz * spec.n_fft
    return float(spec.bin_powers[band_bins(band, spec.n_fft, fs)].sum())


def _cutoff_bin(n: int, sampling_rate_hz: float, cutoff_hz: float) -> int:
    """Number of leading bins kept by the low-pass (center frequency <= cutoff)."""
    if not cutoff_hz > 0:
        raise ValueError(f"cutoff must be positive, got {cutoff_hz}")
    freqs = np.arange(n // 2 + 1) * sampling_rate_hz / n
    return int(np.count_nonzero(freqs <= cutoff_hz))


def lowpass_reconstruct(window, cutoff_hz: float = 10.0, sampling_rate_hz: float = 250.0) -> np.ndarray:
    """Zero every FFT coefficient above ``cutoff_hz`` and invert."""
    x = _check_window(window)
    keep = _cutoff_bin(x.size, sampling_rate_hz, cutoff_hz)
    coefs = np.fft.rfft(x)
    coefs[keep:] = 0
    return np.fft.irfft(coefs, n=x.size)


def _polarity_span(x: np.ndarray) -> float:
    peak = int(np.argmax(x))
    if peak >= x.size - 2:
        return 0.0
    j = np.arange(max(peak + 1, 1), x.size - 1)
    is_min = (x[j] <= x[j - 1]) & (x[j] <= x[j + 1])
    if not is_min.any():
        return 0.0
    return float(x[peak] - x[j[np.argmax(is_min)]])


def amplitude_span(smoothed) -> float:
    """Global maximum minus the first local minimum after it, best of both polarities.

    A local minimum is an interior sample no larger than either neighbour.
    When the maximum has no following local minimum that polarity scores 0.
    """
    x = np.asarray(smoothed, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("amplitude_span needs a non-empty 1-D sequence")
    return max(_polarity_span(x), _polarity_span(-x))


@numba.njit(cache=True, nogil=True)
def _span_rows(rows, out):
    n = rows.shape[1]
    for r in range(rows.shape[0]):
        row = rows[r]
        hi = 0
        lo = 0
        for i in range(1, n):
            if row[i] > row[hi]:
                hi = i
            if row[i] < row[lo]:
                lo = i
        # positive polarity: max, then first interior local minimum after it
        a = 0.0
        for j in range(hi + 1, n - 1):
            if row[j] <= row[j - 1] and row[j] <= row[j + 1]:
                a = row[hi] - row[j]
                break
        # inverted signal: min, then first interior local maximum after it
        b = 0.0
        for j in range(lo + 1, n - 1):
            if row[j] >= row[j - 1] and row[j] >= row[j + 1]:
                b = row[j] - row[lo]
                break
        out[r] = a if a >= b else b


def feature_frame(
    window,
    bands: Sequence[BandDef] = DEFAULT_BANDS,
    cutoff_hz: float = 10.0,
    sampling_rate_hz: float = 250.0,
) -> FeatureFrame:
    """The five per-window features: four band powers and the amplitude span."""
    if len(bands) != 4:
        raise ValueError("exactly four bands are required")
    spec = power_spectrum(window, sampling_rate_hz)
    powers = [band_power(spec, b) for b in bands]
    s = amplitude_span(lowpass_reconstruct(window, cutoff_hz, sampling_rate_hz))
    return FeatureFrame(*powers, s)


# --------------------------------------------------------------------------
# batched versions used by the detectors
# --------------------------------------------------------------------------

def window_spectra(x: np.ndarray, indexing: WindowIndexing, bins=None) -> np.ndarray:
    """Power spectra of every window of a 1-D signal, shape (n_windows, n_bins).

    ``bins`` optionally restricts the returned columns.
    """
    n = indexing.spec.length_samples
    view = indexing.view(np.asarray(x, dtype=np.float64))
    scale = _onesided_scale(n)
    if bins is not None:
        bins = np.asarray(bins, dtype=np.intp)
        scale = scale[bins]
    ncols = scale.size
    out = np.empty((indexing.window_count, ncols))
    for lo in range(0, indexing.window_count, _CHUNK):
        coefs = np.fft.rfft(view[lo:lo + _CHUNK], axis=1)
        if bins is not None:
            coefs = coefs[:, bins]
        out[lo:lo + _CHUNK] = (coefs.real**2 + coefs.imag**2) * scale
    return out


def _band_matrix(bands, n: int, fs: float) -> np.ndarray:
    return np.stack([band_bins(b, n, fs) for b in bands], axis=1).astype(np.float64)


def _synthesis_basis(n: int, keep: int) -> np.ndarray:
    """Rows map interleaved (re, im) rfft coefficients of bins < keep back to samples."""
    k = np.arange(keep)
    t = np.arange(n)
    w = np.where((k == 0) | (2 * k == n), 1.0, 2.0) / n
    phase = 2 * np.pi * (np.outer(k, t) % n) / n
    basis = np.empty((2 * keep, n))
    basis[0::2] = w[:, None] * np.cos(phase)
    basis[1::2] = -w[:, None] * np.sin(phase)
    return basis


def channel_features(
    x: np.ndarray,
    indexing: WindowIndexing,
    bands: Sequence[BandDef] = DEFAULT_BANDS,
    cutoff_hz: float = 10.0,
) -> np.ndarray:
    """Feature matrix (n_windows, 5) for one channel: columns p1..p4, s.

    Equivalent to :func:`feature_frame` on every window. The low-pass inverse
    transform is done as a product with the synthesis basis of the few
    retained bins, which is cheaper than a full inverse FFT.
    """
    n = indexing.spec.length_samples
    fs = indexing.sampling_rate_hz
    bm = _band_matrix(bands, n, fs)
    n_band = int(np.flatnonzero(bm.any(axis=1))[-1]) + 1
    bm = bm[:n_band]
    keep = _cutoff_bin(n, fs, cutoff_hz)
    basis = _synthesis_basis(n, keep)
    n_used = max(n_band, keep)
    scale = _onesided_scale(n)[:n_band]
    view = indexing.view(np.asarray(x, dtype=np.float64))
    out = np.empty((indexing.window_count, 5))
    spans = np.empty(min(_CHUNK, indexing.window_count))
    for lo in range(0, indexing.window_count, _CHUNK):
        coefs = np.ascontiguousarray(np.fft.rfft(view[lo:lo + _CHUNK], axis=1)[:, :n_used])
        k = coefs.shape[0]
        power = (coefs[:, :n_band].real ** 2 + coefs[:, :n_band].imag ** 2) * scale
        out[lo:lo + k, :4] = power @ bm
        smooth = coefs.view(np.float64)[:, : 2 * keep] @ basis
        _span_rows(smooth, spans[:k])
        out[lo:lo + k, 4] = spans[:k]
    return out


def record_features(
    record,
    window: WindowSpec = WindowSpec(),
    bands: Sequence[BandDef] = DEFAULT_BANDS,
    cutoff_hz: float = 10.0,
    n_jobs: int | None = 1,
) -> tuple[np.ndarray, WindowIndexing]:
    """Features for every channel, shape (n_channels, n_windows, 5).

    Channels are processed independently (optionally on a thread pool); the
    result is stacked in channel order, so it does not depend on ``n_jobs``.
    """
    if len(bands) != 4:
        raise ValueError("exactly four bands are required")
    indexing = make_windows(record, window)
    jobs = resolve_n_jobs(n_jobs)

    def work(c):
        return channel_features(record.samples[c], indexing, bands, cutoff_hz)

    if jobs == 1 or record.n_channels == 1:
        feats = [work(c) for c in range(record.n_channels)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            feats = list(pool.map(work, range(record.n_channels)))
    return np.stack(feats), indexing


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Sliding-window feature extraction as a stateless transformer.

    Parameters
    ----------
    window_length : int, default=256
        Window length in samples (power of two).
    window_step : int, default=26
        Window step in samples.
    bands : sequence of BandDef, default=DEFAULT_BANDS
        The four power bands.
    cutoff_hz : float, default=10.0
        Low-pass cutoff used before computing the amplitude span.
    sampling_rate_hz : float, optional
        Needed only when ``X`` is a bare array rather than an EegRecord.
    n_jobs : int, optional
        Thread count for per-channel work.
    """

    def __init__(self, window_length=256, window_step=26, bands=DEFAULT_BANDS,
                 cutoff_hz=10.0, sampling_rate_hz=None, n_jobs=None):
        self.window_length = window_length
        self.window_step = window_step
        self.bands = bands
        self.cutoff_hz = cutoff_hz
        self.sampling_rate_hz = sampling_rate_hz
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        record = check_record(X, self.sampling_rate_hz)
        self.n_channels_ = record.n_channels
        return self

    def transform(self, X):
        """Return an array of shape (n_channels, n_windows, 5)."""
        record = check_record(X, self.sampling_rate_hz)
        feats, self.indexing_ = record_features(
            record, WindowSpec(self.window_length, self.window_step),
            self.bands, self.cutoff_hz, self.n_jobs,
        )
        return feats

    def get_feature_names_out(self, input_features=None):
        return np.array(FEATURE_NAMES, dtype=object)

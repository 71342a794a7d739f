"""Seeded synthetic EEG with planted K-complex-like waveforms.

The planted waveform is a two-lobe Gaussian pulse over a nominal duration
``d``::

    w(t) = -exp(-(t - d/6)^2 / (2 (d/10)^2)) + exp(-(t - 2d/3)^2 / (2 (d/6)^2))

a sharp negative lobe followed by a slower positive one, rescaled so its
peak-to-trough equals the requested amplitude. ``polarity="pos"`` flips the
sign. The truth time of an event is the zero crossing between the lobes.
Samples are rounded to float32 precision so a corpus survives the binary
record format unchanged.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Literal

import numpy as np
from scipy.optimize import brentq

from .io import AnnotationSet, DataError, EegRecord
from .spectral import DEFAULT_BANDS, band_bins, window_spectra
from .windows import WindowSpec, make_windows

__all__ = [
    "BackgroundSpec",
    "TemplateSpec",
    "EventSpec",
    "SynthSpec",
    "SynthCorpus",
    "template_waveform",
    "generate",
    "spectral_profile",
]


@dataclass(frozen=True)
class BackgroundSpec:
    noise_kind: Literal["pink", "white"] = "pink"
    rms_uv: float = 15.0


@dataclass(frozen=True)
class TemplateSpec:
    duration_s: float = 1.0
    peak_to_trough_uv: float = 90.0
    polarity: Literal["pos", "neg", "random"] = "random"


@dataclass(frozen=True)
class EventSpec:
    count: int = 60
    template: TemplateSpec = field(default_factory=TemplateSpec)
    min_separation_s: float = 5.0
    channel_visibility: float = 0.6


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    duration_s: float = 1800.0
    sampling_rate_hz: float = 250.0
    channel_count: int = 20
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    events: EventSpec = field(default_factory=EventSpec)

    def __post_init__(self):
        ev, tpl = self.events, self.events.template
        if self.duration_s <= 0 or self.sampling_rate_hz <= 0 or self.channel_count < 1:
            raise DataError("duration, sampling rate and channel count must be positive")
        if self.background.noise_kind not in ("pink", "white"):
            raise DataError(f"unknown noise kind {self.background.noise_kind!r}")
        if self.background.rms_uv < 0:
            raise DataError("background rms must be non-negative")
        if not 0.5 <= tpl.duration_s <= 1.5:
            raise DataError(f"template duration must be in [0.5, 1.5] s, got {tpl.duration_s}")
        if tpl.peak_to_trough_uv < 0:
            raise DataError("peak_to_trough_uv must be non-negative")
        if tpl.polarity not in ("pos", "neg", "random"):
            raise DataError(f"unknown polarity {tpl.polarity!r}")
        if not 0 < ev.channel_visibility <= 1:
            raise DataError("channel_visibility must be in (0, 1]")
        if ev.count < 0 or ev.min_separation_s < 0:
            raise DataError("event count and separation must be non-negative")
        if ev.count * ev.min_separation_s > self.duration_s:
            raise DataError(
                f"infeasible packing: {ev.count} events x {ev.min_separation_s} s "
                f"separation exceed {self.duration_s} s"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        bg = BackgroundSpec(**d.pop("background", {}))
        ev = dict(d.pop("events", {}))
        tpl = TemplateSpec(**ev.pop("template", {}))
        return cls(background=bg, events=EventSpec(template=tpl, **ev), **d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SynthCorpus:
    record: EegRecord
    truth: AnnotationSet
    spec: SynthSpec
    carriers: tuple = ()  # per event: channel indices carrying it

    def to_dict(self) -> dict:
        return self.spec.to_dict()


def _lobes(t, d):
    return -np.exp(-((t - d / 6) ** 2) / (2 * (d / 10) ** 2)) + np.exp(
        -((t - 2 * d / 3) ** 2) / (2 * (d / 6) ** 2)
    )


def _zero_crossing(d: float) -> float:
    return brentq(lambda t: _lobes(t, d), d / 6, 2 * d / 3, xtol=1e-14)


def _unit_range(d: float) -> float:
    t = np.linspace(-d, 2 * d, 200001)
    w = _lobes(t, d)
    return float(w.max() - w.min())


def template_waveform(t, duration_s: float = 1.0, peak_to_trough_uv: float = 1.0, polarity: int = -1):
    """Planted waveform evaluated at times ``t`` relative to its zero crossing.

    ``polarity=-1`` starts with the negative lobe.
    """
    d = duration_s
    scale = peak_to_trough_uv / _unit_range(d)
    return -polarity * scale * _lobes(np.asarray(t, dtype=np.float64) + _zero_crossing(d), d)


def _noise(rng: np.random.Generator, n: int, kind: str, rms: float) -> np.ndarray:
    if rms == 0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    else:
        spec = np.fft.rfft(white)
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = np.inf  # drop DC
        x = np.fft.irfft(spec / np.sqrt(f), n=n)  # 1/f power
    x -= x.mean()
    return x * (rms / np.sqrt(np.mean(x**2)))


def _event_times(rng, spec: SynthSpec) -> np.ndarray:
    ev = spec.events
    if ev.count == 0:
        return np.empty(0)
    margin = min(1.5 * ev.template.duration_s, spec.duration_s / 4)
    free = spec.duration_s - 2 * margin - (ev.count - 1) * ev.min_separation_s
    if free < 0:
        raise DataError(f"infeasible packing: {ev.count} events do not fit with edge margins")
    u = np.sort(rng.uniform(0.0, free, ev.count))
    return margin + u + np.arange(ev.count) * ev.min_separation_s


def generate(spec: SynthSpec) -> SynthCorpus:
    """Build a corpus; bit-identical output for a given spec (seed included)."""
    fs = spec.sampling_rate_hz
    n = int(round(spec.duration_s * fs))
    m = spec.channel_count
    root = np.random.SeedSequence(spec.seed)
    event_seq, *channel_seqs = root.spawn(m + 1)
    ev_rng = np.random.default_rng(event_seq)

    data = np.empty((m, n))
    for c, seq in enumerate(channel_seqs):
        data[c] = _noise(np.random.default_rng(seq), n, spec.background.noise_kind, spec.background.rms_uv)

    ev = spec.events
    tpl = ev.template
    times = _event_times(ev_rng, spec)
    n_vis = max(1, int(round(ev.channel_visibility * m)))
    half = int(np.ceil(2 * tpl.duration_s * fs))
    carriers = []
    for t0 in times:
        chans = np.sort(ev_rng.choice(m, size=n_vis, replace=False))
        if tpl.polarity == "random":
            pol = -1 if ev_rng.random() < 0.5 else 1
        else:
            pol = -1 if tpl.polarity == "neg" else 1
        k0 = int(round(t0 * fs))
        lo, hi = max(0, k0 - half), min(n, k0 + half + 1)
        wave = template_waveform(np.arange(lo, hi) / fs - t0, tpl.duration_s, tpl.peak_to_trough_uv, pol)
        data[chans, lo:hi] += wave
        carriers.append(tuple(int(c) for c in chans))

    data = data.astype(np.float32).astype(np.float64)
    names = [f"ch{c:02d}" for c in range(m)]
    return SynthCorpus(EegRecord(names, fs, data), AnnotationSet(times), spec, tuple(carriers))


def spectral_profile(corpus: SynthCorpus, window: WindowSpec = WindowSpec(), bands=DEFAULT_BANDS) -> dict:
    """Mean band powers in event-centred windows versus event-free windows.

    Event windows are the nearest-centre windows to each truth time on the
    channels carrying that event; event-free windows are those whose span is
    at least one template duration away from every event.
    """
    rec = corpus.record
    idx = make_windows(rec, window)
    n = window.length_samples
    bm = np.stack([band_bins(b, n, rec.sampling_rate_hz) for b in bands], axis=1).astype(float)
    centers = idx.center_times
    half_len = n / (2 * rec.sampling_rate_hz)
    guard = half_len + corpus.spec.events.template.duration_s
    truth = corpus.truth.events
    if truth.size:
        dist = np.min(np.abs(centers[:, None] - truth[None, :]), axis=1)
        free = dist > guard
    else:
        free = np.ones(idx.window_count, dtype=bool)

    ev_sum, ev_n = np.zeros(len(bands)), 0
    free_sum, free_n = np.zeros(len(bands)), 0
    nearest = [idx.nearest(t) for t in truth]
    for c in range(rec.n_channels):
        bp = window_spectra(rec.samples[c], idx) @ bm
        free_sum += bp[free].sum(axis=0)
        free_n += int(free.sum())
        for e, w in enumerate(nearest):
            carriers = corpus.carriers[e] if corpus.carriers else range(rec.n_channels)
            if c in carriers:
                ev_sum += bp[w]
                ev_n += 1
    nan = np.full(len(bands), np.nan)
    return {
        "event_mean": (ev_sum / ev_n) if ev_n else nan,
        "background_mean": (free_sum / free_n) if free_n else nan,
        "event_windows": ev_n,
        "background_windows": free_n,
        "band_bin_counts": bm.sum(axis=0).astype(int),
    }


def dump_spec(spec: SynthSpec) -> str:
    return json.dumps(spec.to_dict(), indent=2)

"""Record and annotation containers plus their on-disk formats.

Two record formats are supported:

* ``<name>.csv`` with a ``<name>.json`` sidecar (debug format). The CSV has
  one column per channel and a header row of channel names; the sidecar holds
  ``{"sampling_rate_hz": float, "channels": [names]}``.
* ``<name>.eegbin`` (bulk format). Little-endian header: magic ``b"KCX1"``,
  ``u32`` channel count, ``u64`` samples per channel, ``f64`` sampling rate,
  then each channel name as a ``u32`` byte length followed by UTF-8 bytes,
  then channel-major ``f32`` samples.

Annotations are plain text, one event time in seconds per line, ``#``
starting a comment.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "EegRecord",
    "AnnotationSet",
    "load_record",
    "save_record",
    "load_annotations",
    "save_annotations",
]

MAGIC = b"KCX1"
_HEADER = struct.Struct("<IQd")
_NAME_LEN = struct.Struct("<I")


class DataError(ValueError):
    """Raised when input data or a file violates its documented contract."""


@dataclass(frozen=True, eq=False)
class EegRecord:
    """Immutable multichannel EEG signal.

    Parameters
    ----------
    channel_names : sequence of str
        One label per channel.
    sampling_rate_hz : float
        Sampling frequency, strictly positive.
    samples : array-like, shape (n_channels, n_samples)
        Amplitudes in microvolts. Stored as a read-only float64 array.
    """

    channel_names: tuple[str, ...]
    sampling_rate_hz: float
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        names = tuple(str(n) for n in self.channel_names)
        rate = float(self.sampling_rate_hz)
        if not np.isfinite(rate) or rate <= 0:
            raise DataError(f"sampling rate must be positive, got {rate}")
        data = np.array(self.samples, dtype=np.float64, copy=True)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2:
            raise DataError("samples must be 2-D (n_channels, n_samples)")
        if data.shape[0] < 1:
            raise DataError("record needs at least one channel")
        if len(names) != data.shape[0]:
            raise DataError(
                f"channel count mismatch: {len(names)} names for {data.shape[0]} channels"
            )
        data.setflags(write=False)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "sampling_rate_hz", rate)
        object.__setattr__(self, "samples", data)

    def __eq__(self, other):
        if not isinstance(other, EegRecord):
            return NotImplemented
        return (
            self.channel_names == other.channel_names
            and self.sampling_rate_hz == other.sampling_rate_hz
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = object.__hash__

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def select(self, order: Sequence[int]) -> "EegRecord":
        """Return a record with channels reordered/subset by ``order``."""
        order = list(order)
        return EegRecord(
            [self.channel_names[i] for i in order], self.sampling_rate_hz, self.samples[order]
        )

    def scaled(self, gains) -> "EegRecord":
        """Return a copy with each channel multiplied by its gain."""
        gains = np.broadcast_to(np.asarray(gains, dtype=np.float64), (self.n_channels,))
        return EegRecord(self.channel_names, self.sampling_rate_hz, self.samples * gains[:, None])


@dataclass(frozen=True, eq=False)
class AnnotationSet:
    """Sorted, duplicate-free event times in seconds from record start."""

    events: np.ndarray

    def __post_init__(self):
        ev = np.unique(np.asarray(self.events, dtype=np.float64).ravel())
        if ev.size and not np.all(np.isfinite(ev)):
            raise DataError("event times must be finite")
        if ev.size and ev[0] < 0:
            raise DataError(f"negative event time: {ev[0]}")
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)

    def __eq__(self, other):
        if not isinstance(other, AnnotationSet):
            return NotImplemented
        return np.array_equal(self.events, other.events)

    __hash__ = object.__hash__

    def __len__(self):
        return self.events.size

    def __iter__(self):
        return iter(self.events.tolist())

    def check_within(self, duration_s: float) -> None:
        """Raise DataError if any event lies after ``duration_s``."""
        if self.events.size and self.events[-1] > duration_s:
            raise DataError(
                f"event at {self.events[-1]:.6g} s is past record end {duration_s:.6g} s"
            )


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

def load_record(path) -> EegRecord:
    """Load a record from ``.eegbin`` or ``.csv`` (with JSON sidecar)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    suffix = path.suffix.lower()
    if suffix == ".eegbin":
        return _load_eegbin(path)
    if suffix == ".csv":
        return _load_csv(path)
    raise DataError(f"{path}: unknown record format {suffix!r} (expected .eegbin or .csv)")


def save_record(record: EegRecord, path) -> Path:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".eegbin":
        _save_eegbin(record, path)
    elif suffix == ".csv":
        _save_csv(record, path)
    else:
        raise DataError(f"{path}: unknown record format {suffix!r}")
    return path


def _load_eegbin(path: Path) -> EegRecord:
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: offset 0: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    off = 4
    if len(raw) < off + _HEADER.size:
        raise DataError(f"{path}: offset {off}: truncated header")
    n_ch, n_samp, rate = _HEADER.unpack_from(raw, off)
    if n_ch < 1:
        raise DataError(f"{path}: offset {off}: channel count must be >= 1, got {n_ch}")
    if not rate > 0:
        raise DataError(f"{path}: offset {off + 12}: non-positive sampling rate {rate}")
    off += _HEADER.size
    names = []
    for _ in range(n_ch):
        if len(raw) < off + _NAME_LEN.size:
            raise DataError(f"{path}: offset {off}: truncated channel name table")
        (n,) = _NAME_LEN.unpack_from(raw, off)
        off += _NAME_LEN.size
        if len(raw) < off + n:
            raise DataError(f"{path}: offset {off}: truncated channel name")
        try:
            names.append(raw[off:off + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{path}: offset {off}: channel name is not UTF-8") from exc
        off += n
    expected = n_ch * n_samp * 4
    if len(raw) - off != expected:
        raise DataError(
            f"{path}: offset {off}: inconsistent channel lengths, payload has "
            f"{len(raw) - off} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=n_ch * n_samp, offset=off)
    return EegRecord(names, rate, data.reshape(n_ch, n_samp).astype(np.float64))


def _save_eegbin(record: EegRecord, path: Path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(record.n_channels, record.n_samples, record.sampling_rate_hz))
        for name in record.channel_names:
            b = name.encode("utf-8")
            fh.write(_NAME_LEN.pack(len(b)))
            fh.write(b)
        fh.write(np.ascontiguousarray(record.samples, dtype="<f4").tobytes())


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def _load_csv(path: Path) -> EegRecord:
    side = _sidecar(path)
    if not side.exists():
        raise DataError(f"{side}: missing sidecar for {path.name}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{side}: line {exc.lineno}: malformed JSON ({exc.msg})") from exc
    if not isinstance(meta, dict) or "sampling_rate_hz" not in meta or "channels" not in meta:
        raise DataError(f"{side}: sidecar needs 'sampling_rate_hz' and 'channels'")
    rate = meta["sampling_rate_hz"]
    if not isinstance(rate, (int, float)) or not rate > 0:
        raise DataError(f"{side}: non-positive sampling rate {rate!r}")
    channels = [str(c) for c in meta["channels"]]

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: line 1: empty file, expected header row") from None
        if len(header) != len(channels):
            raise DataError(
                f"{path}: line 1: channel count mismatch, sidecar declares "
                f"{len(channels)} channels, CSV has {len(header)} columns"
            )
        if [h.strip() for h in header] != channels:
            raise DataError(f"{path}: line 1: header {header} does not match sidecar {channels}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(channels):
                raise DataError(
                    f"{path}: line {lineno}: inconsistent channel lengths, "
                    f"expected {len(channels)} values, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    data = np.array(rows, dtype=np.float64).reshape(-1, len(channels)).T
    return EegRecord(channels, float(rate), data)


def _save_csv(record: EegRecord, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(record.channel_names)
        for row in record.samples.T:
            w.writerow([repr(float(v)) for v in row])
    _sidecar(path).write_text(
        json.dumps(
            {"sampling_rate_hz": record.sampling_rate_hz, "channels": list(record.channel_names)},
            indent=2,
        )
    )


# --------------------------------------------------------------------------
# annotations
# --------------------------------------------------------------------------

def parse_annotations(lines: Iterable[str], source: str = "<annotations>") -> AnnotationSet:
    times = []
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        try:
            t = float(text)
        except ValueError:
            raise DataError(f"{source}: line {lineno}: unparseable event time {text!r}") from None
        if not np.isfinite(t):
            raise DataError(f"{source}: line {lineno}: non-finite event time {text!r}")
        if t < 0:
            raise DataError(f"{source}: line {lineno}: negative event time {t}")
        times.append(t)
    return AnnotationSet(times)


def load_annotations(path) -> AnnotationSet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path) as fh:
        return parse_annotations(fh, str(path))


def save_annotations(annotations, path) -> Path:
    path = Path(path)
    events = annotations.events if isinstance(annotations, AnnotationSet) else annotations
    with open(path, "w") as fh:
        for t in events:
            fh.write(f"{float(t)!r}\n")
    return path

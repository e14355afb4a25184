"""Recordings, label intervals and binary masks, plus their on-disk formats.

Signal CSV::

    sample_rate_hz=100
    0.0
    1.0

Signal binary: ``<name>.f32`` (little-endian float32) with a sidecar
``<name>.json`` holding ``{"sample_rate_hz": ..., "subject_id": ...}``.

Labels CSV: header ``start_s,end_s,label`` and one interval per row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LABEL_HEADER = ("start_s", "end_s", "label")


class SignalFormatError(ValueError):
    """Malformed signal file."""

    code = "MalformedSignal"


class MalformedSample(SignalFormatError):
    code = "MalformedSample"


class InvalidInterval(ValueError):
    code = "InvalidInterval"


@dataclass
class Recording:
    samples: np.ndarray
    sample_rate_hz: float
    subject_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("recording needs a non-empty 1-D sample array")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise SignalFormatError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise MalformedSample("recording contains NaN or Inf samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def with_samples(self, samples, sample_rate_hz: float | None = None) -> "Recording":
        rate = self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
        return Recording(samples, rate, self.subject_id)


@dataclass
class EventSet:
    """Labeled half-open intervals ``[start_s, end_s)`` on a recording timeline.

    Same-label intervals are kept sorted and merged whenever they overlap or
    touch, so equality between two sets is a plain list comparison.
    """

    intervals: list[tuple[float, float, str]] = field(default_factory=list)
    total_duration_s: float = math.inf

    def __post_init__(self):
        self.intervals = canonicalize(self.intervals, self.total_duration_s)

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def labels(self) -> list[str]:
        return sorted({lab for _, _, lab in self.intervals})

    def only(self, label: str) -> "EventSet":
        return EventSet([iv for iv in self.intervals if iv[2] == label], self.total_duration_s)

    def spans(self) -> list[tuple[float, float]]:
        return [(s, e) for s, e, _ in self.intervals]

    def durations(self) -> np.ndarray:
        return np.array([e - s for s, e, _ in self.intervals], dtype=np.float64)


def _check_interval(start: float, end: float, total: float) -> None:
    if not (math.isfinite(start) and math.isfinite(end)):
        raise InvalidInterval(f"non-finite interval bounds ({start}, {end})")
    if start < 0:
        raise InvalidInterval(f"negative start time {start}")
    if start >= end:
        raise InvalidInterval(f"interval start {start} is not before end {end}")
    if end > total:
        raise InvalidInterval(f"interval end {end} beyond recording duration {total}")


def canonicalize(intervals, total_duration_s: float = math.inf) -> list[tuple[float, float, str]]:
    by_label: dict[str, list[tuple[float, float]]] = {}
    for start, end, label in intervals:
        start, end = float(start), float(end)
        _check_interval(start, end, total_duration_s)
        by_label.setdefault(str(label), []).append((start, end))

    out = []
    for label, spans in by_label.items():
        for start, end in merge_spans(spans):
            out.append((start, end, label))
    out.sort(key=lambda iv: (iv[0], iv[1], iv[2]))
    return out


def merge_spans(spans, gap: float = 0.0) -> list[tuple[float, float]]:
    """Merge spans whose separation is at most ``gap`` (touching spans merge at gap 0)."""
    merged: list[list[float]] = []
    for start, end in sorted(spans):
        if merged and start - merged[-1][1] <= gap:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


# --- signals -----------------------------------------------------------------

def _parse_rate(text: str) -> float:
    key, sep, value = text.strip().partition("=")
    if not sep or key.strip() != "sample_rate_hz":
        raise SignalFormatError(f"expected 'sample_rate_hz=<float>' header, got {text.strip()!r}")
    try:
        rate = float(value)
    except ValueError:
        raise SignalFormatError(f"unparseable sample rate {value!r}") from None
    if not (rate > 0 and math.isfinite(rate)):
        raise SignalFormatError(f"sample rate must be positive, got {rate}")
    return rate


def _parse_sample(token: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise MalformedSample(f"non-numeric sample {token!r}") from None
    if not math.isfinite(value):
        raise MalformedSample(f"non-finite sample {token!r}")
    return value


def parse_signal_csv(text: str, subject_id: str = "") -> Recording:
    """Parse the CSV signal format.

    The header is separated from the samples by a newline or a semicolon, and
    samples may be split across lines and commas, so the one-line form
    ``"sample_rate_hz=100; 0.0,1.0,-1.0"`` is accepted as well.
    """
    text = text.strip()
    if not text:
        raise SignalFormatError("empty signal file")
    cut = min((i for i in (text.find("\n"), text.find(";")) if i >= 0), default=len(text))
    rate = _parse_rate(text[:cut])
    body = text[cut + 1:]
    tokens = [t for t in body.replace(",", " ").replace(";", " ").split()]
    if not tokens:
        raise SignalFormatError("signal file has no samples")
    samples = np.array([_parse_sample(t) for t in tokens], dtype=np.float64)
    return Recording(samples, rate, subject_id)


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def load_signal(path, format: str | None = None) -> Recording:
    """Load a recording; ``format`` is ``"csv"`` or ``"f32"`` (inferred from the suffix)."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        return parse_signal_csv(path.read_text(encoding="utf-8"), subject_id=path.stem)
    if fmt == "f32":
        side = _sidecar(path)
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise SignalFormatError(f"missing sidecar {side.name}") from None
        except json.JSONDecodeError as exc:
            raise SignalFormatError(f"malformed sidecar {side.name}: {exc}") from None
        if not isinstance(meta, dict) or "sample_rate_hz" not in meta:
            raise SignalFormatError("sidecar lacks sample_rate_hz")
        try:
            rate = float(meta["sample_rate_hz"])
        except (TypeError, ValueError):
            raise SignalFormatError(f"bad sample rate {meta['sample_rate_hz']!r}") from None
        if not (rate > 0 and math.isfinite(rate)):
            raise SignalFormatError(f"sample rate must be positive, got {rate}")
        raw = path.read_bytes()
        if len(raw) % 4:
            raise SignalFormatError("binary signal length is not a multiple of 4 bytes")
        samples = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if samples.size == 0:
            raise SignalFormatError("signal file has no samples")
        if not np.all(np.isfinite(samples)):
            raise MalformedSample("recording contains NaN or Inf samples")
        return Recording(samples, rate, str(meta.get("subject_id", path.stem)))
    raise SignalFormatError(f"unknown signal format {fmt!r}")


def save_signal(rec: Recording, path, format: str | None = None) -> Path:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt == "csv":
        lines = [f"sample_rate_hz={rec.sample_rate_hz!r}"]
        lines.extend(repr(float(v)) for v in rec.samples)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "f32":
        path.write_bytes(rec.samples.astype("<f4").tobytes())
        meta = {"sample_rate_hz": rec.sample_rate_hz, "subject_id": rec.subject_id}
        _sidecar(path).write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise SignalFormatError(f"unknown signal format {fmt!r}")
    return path


# --- labels ------------------------------------------------------------------

def load_labels(path, total_duration_s: float = math.inf) -> EventSet:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        return EventSet([], total_duration_s)
    if tuple(c.strip() for c in rows[0]) == LABEL_HEADER:
        rows = rows[1:]
    intervals = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 3:
            raise InvalidInterval(f"line {lineno}: expected start_s,end_s,label")
        try:
            start, end = float(row[0]), float(row[1])
        except ValueError:
            raise InvalidInterval(f"line {lineno}: non-numeric time") from None
        intervals.append((start, end, row[2].strip()))
    return EventSet(intervals, total_duration_s)


def save_labels(events: EventSet, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        for start, end, label in events.intervals:
            # repr round-trips floats exactly
            writer.writerow([repr(start), repr(end), label])
    return path


# --- masks -------------------------------------------------------------------

def events_to_mask(events: EventSet, n_samples: int, rate: float, label: str | None = None) -> np.ndarray:
    """Rasterize intervals: sample ``i`` is 1 iff ``i / rate`` lies in some ``[start, end)``."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    mask = np.zeros(n_samples, dtype=np.uint8)
    for start, end, lab in events.intervals:
        if label is not None and lab != label:
            continue
        # smallest i with i/rate >= start, smallest i with i/rate >= end
        lo = _first_index_at_or_after(start, rate)
        hi = _first_index_at_or_after(end, rate)
        mask[max(lo, 0):min(hi, n_samples)] = 1
    return mask


def _first_index_at_or_after(t: float, rate: float) -> int:
    i = math.ceil(t * rate)
    # guard against t*rate rounding across an integer
    while i > 0 and (i - 1) / rate >= t:
        i -= 1
    while i / rate < t:
        i += 1
    return i

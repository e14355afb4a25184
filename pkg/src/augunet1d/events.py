"""Mask/event conversion, pointwise and event-level scoring, event feature statistics."""

from __future__ import annotations

import bisect
from dataclasses import asdict, dataclass

import numpy as np
from scipy import signal as sps

from .signal_io import EventSet, Recording, events_to_mask

PEAK_BAND_HZ = (1.0, 20.0)


class IntervalTooShort(ValueError):
    code = "IntervalTooShort"


@dataclass(frozen=True)
class PointwiseScore:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EventScore:
    tp_pred: int
    fp_pred: int
    tp_truth: int
    fn_truth: int
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EventFeatures:
    count: int
    total_duration_s: float
    rate_per_hour: float
    durations_s: list[float]
    duration_mean_s: float | None
    duration_sd_s: float | None
    peak_frequencies_hz: list[float] | None = None
    peak_frequency_mean_hz: float | None = None
    peak_frequency_sd_hz: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def runs(mask) -> list[tuple[int, int]]:
    """Maximal runs of ones as half-open index pairs."""
    m = np.asarray(mask).astype(bool).astype(np.int8)
    edges = np.diff(np.concatenate([[0], m, [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return list(zip(starts.tolist(), ends.tolist()))


def mask_to_events(mask, rate: float, min_duration_s: float = 0.5, merge_gap_s: float = 0.2,
                   label: str = "SWD") -> EventSet:
    """Runs of ones become ``[i0/rate, i1/rate)`` intervals.

    Runs separated by less than ``merge_gap_s`` merge first; merged events
    shorter than ``min_duration_s`` are then dropped.
    """
    mask = np.asarray(mask)
    total = mask.size / rate
    spans: list[list[float]] = []
    for i0, i1 in runs(mask):
        start, end = i0 / rate, i1 / rate
        if spans and start - spans[-1][1] < merge_gap_s:
            spans[-1][1] = end
        else:
            spans.append([start, end])
    kept = [(s, e, label) for s, e in spans if e - s >= min_duration_s]
    return EventSet(kept, total)


def pointwise_metrics(pred, truth) -> PointwiseScore:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: pred {pred.shape} vs truth {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    return PointwiseScore(tp, fp, fn, tn, p, r, _f1(p, r))


def _overlap_flags(queries, targets) -> list[bool]:
    """For each half-open query span, whether it intersects any target span."""
    if not targets:
        return [False] * len(queries)
    targets = sorted(targets)
    starts = [s for s, _ in targets]
    reach = np.maximum.accumulate([e for _, e in targets]).tolist()
    flags = []
    for s, e in queries:
        n_before = bisect.bisect_left(starts, e)  # targets starting before the query ends
        flags.append(n_before > 0 and reach[n_before - 1] > s)
    return flags


def eventwise_metrics(pred: EventSet, truth: EventSet) -> EventScore:
    """Any-overlap matching: each event counts once, however many partners it touches."""
    p_spans, t_spans = pred.spans(), truth.spans()
    pred_hit = _overlap_flags(p_spans, t_spans)
    truth_hit = _overlap_flags(t_spans, p_spans)
    tp_pred = sum(pred_hit)
    tp_truth = sum(truth_hit)
    fp_pred = len(p_spans) - tp_pred
    fn_truth = len(t_spans) - tp_truth
    p = _ratio(tp_pred, tp_pred + fp_pred)
    r = _ratio(tp_truth, tp_truth + fn_truth)
    return EventScore(tp_pred, fp_pred, tp_truth, fn_truth, p, r, _f1(p, r))


def peak_frequency(rec: Recording, interval, band=PEAK_BAND_HZ) -> float:
    """Frequency of maximum Welch power (1 s Hann segments, 50% overlap) inside ``band``."""
    start, end = float(interval[0]), float(interval[1])
    if end - start < 1.0:
        raise IntervalTooShort(f"interval of {end - start:.3f} s is shorter than 1 s")
    fs = rec.sample_rate_hz
    i0 = max(int(round(start * fs)), 0)
    i1 = min(int(round(end * fs)), rec.samples.size)
    seg = rec.samples[i0:i1]
    nperseg = int(round(fs))
    if seg.size < nperseg:
        raise IntervalTooShort("interval holds fewer samples than one analysis window")
    # zero-padded FFT gives a 0.1 Hz grid without changing the 1 s segments
    freqs, power = sps.welch(seg, fs=fs, window="hann", nperseg=nperseg,
                             noverlap=nperseg // 2, nfft=10 * nperseg, detrend="constant")
    in_band = (freqs >= band[0]) & (freqs <= band[1])
    return float(freqs[in_band][np.argmax(power[in_band])])


def _mean_sd(values) -> tuple[float | None, float | None]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return None, None
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else None
    return mean, sd


def event_stats(events: EventSet, total_duration_s: float, recording: Recording | None = None) -> EventFeatures:
    """Count, hourly rate and duration moments (sample SD); peak frequencies when a recording is given."""
    durations = events.durations()
    mean, sd = _mean_sd(durations)
    rate = len(events) / (total_duration_s / 3600.0) if total_duration_s > 0 else 0.0
    feats = EventFeatures(
        count=len(events),
        total_duration_s=float(total_duration_s),
        rate_per_hour=float(rate),
        durations_s=durations.tolist(),
        duration_mean_s=mean,
        duration_sd_s=sd,
    )
    if recording is not None:
        peaks = [peak_frequency(recording, (s, e)) for s, e in events.spans() if e - s >= 1.0]
        feats.peak_frequencies_hz = peaks
        feats.peak_frequency_mean_hz, feats.peak_frequency_sd_hz = _mean_sd(peaks)
    return feats


def score_recording(pred_mask, truth_mask, rate: float, min_duration_s: float = 0.5,
                    merge_gap_s: float = 0.2) -> dict:
    """Pointwise score on the post-processed prediction plus the event-level score.

    ``pred_mask`` is post-processed into events and re-rasterized, so both
    scores judge the same final output; truth is taken as labeled.
    """
    pred_events = mask_to_events(pred_mask, rate, min_duration_s, merge_gap_s)
    truth_events = mask_to_events(truth_mask, rate, 0.0, 0.0)
    pred_final = events_to_mask(pred_events, len(pred_mask), rate)
    return {
        "pointwise": pointwise_metrics(pred_final, truth_mask).to_dict(),
        "eventwise": eventwise_metrics(pred_events, truth_events).to_dict(),
    }

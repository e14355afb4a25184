"""Rule-based noise and sleep epoch detection, and event-in-state proportions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps
from scipy.ndimage import gaussian_filter1d

from .events import _overlap_flags, runs
from .signal_io import EventSet, Recording, merge_spans

SLEEP_BAND_HZ = (0.1, 4.0)


@dataclass
class StateEpochs:
    kind: str
    intervals: EventSet
    thresholds: dict = field(default_factory=dict)
    diagnostic: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intervals": [[s, e] for s, e in self.intervals.spans()],
            "thresholds": self.thresholds,
            "diagnostic": self.diagnostic,
        }


def detect_noise(rec: Recording, block_s: float = 5.0, k_sd: float = 20.0) -> StateEpochs:
    """Flag blocks holding any sample at least ``k_sd`` global SDs from the global mean.

    A trailing partial block counts as a block. Adjacent flagged blocks coalesce.
    """
    x = rec.samples
    mu = float(x.mean())
    sd = float(x.std())
    n = max(int(round(block_s * rec.sample_rate_hz)), 1)
    n_blocks = math.ceil(x.size / n)
    spans = []
    if sd > 0:
        outlier = np.abs(x - mu) >= k_sd * sd
        padded = np.zeros(n_blocks * n, dtype=bool)
        padded[:x.size] = outlier
        flagged = padded.reshape(n_blocks, n).any(axis=1)
        for b in np.flatnonzero(flagged):
            spans.append((b * n / rec.sample_rate_hz, min((b + 1) * n, x.size) / rec.sample_rate_hz))
    intervals = EventSet([(s, e, "noise") for s, e in merge_spans(spans)], rec.duration_s)
    thresholds = {"mean": mu, "sd": sd, "k_sd": k_sd, "block_s": block_s,
                  "lower": mu - k_sd * sd, "upper": mu + k_sd * sd}
    return StateEpochs("noise", intervals, thresholds)


def bandpass(x: np.ndarray, rate: float, band=SLEEP_BAND_HZ, stop_db: float = 40.0,
             transition_hz: float = 0.1) -> np.ndarray:
    """Zero-phase band-pass: odd-length symmetric Kaiser FIR applied centered."""
    nyq = rate / 2.0
    numtaps, beta = sps.kaiserord(stop_db, transition_hz / nyq)
    numtaps |= 1
    taps = sps.firwin(numtaps, list(band), window=("kaiser", beta), pass_zero=False, fs=rate)
    return sps.fftconvolve(x, taps, mode="same")


def band_envelope(rec: Recording, band=SLEEP_BAND_HZ) -> np.ndarray:
    """Magnitude of the analytic signal of the band-passed recording."""
    return np.abs(sps.hilbert(bandpass(rec.samples, rec.sample_rate_hz, band)))


def _two_modes(env: np.ndarray, n_bins: int, smooth_bins: float, upper_pct: float,
               min_separation: float, min_prominence: float, min_relative_prominence: float = 0.1):
    hi = float(np.percentile(env, upper_pct))
    counts, edges = np.histogram(env, bins=n_bins, range=(0.0, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    density = gaussian_filter1d(counts.astype(np.float64), smooth_bins, mode="constant")
    # pad so a mode in the first or last bin still registers as a local maximum
    padded = np.concatenate([[0.0], density, [0.0]])
    peaks, props = sps.find_peaks(
        padded,
        distance=max(1, int(math.ceil(min_separation * n_bins))),
        prominence=min_prominence * density.max(),
    )
    # a genuine mode rises out of a valley; shallow ripples on one broad mode do not
    deep = props["prominences"] >= min_relative_prominence * padded[peaks]
    peaks = peaks[deep] - 1
    if peaks.size < 2:
        return None, centers, density
    top = peaks[np.argsort(density[peaks])[-2:]]
    low, high = sorted(centers[top])
    return (float(low), float(high)), centers, density


def detect_sleep(rec: Recording, band=SLEEP_BAND_HZ, merge_gap_s: float = 20.0, n_bins: int = 256,
                 smooth_bins: float = 3.0, upper_pct: float = 99.5, min_separation: float = 0.1,
                 min_prominence: float = 0.01, min_relative_prominence: float = 0.1) -> StateEpochs:
    """Sleep epochs from a bimodal band-envelope distribution.

    The low mode of the envelope histogram is wake, the high mode sleep. Runs
    above the midpoint of the two modes are candidates; a candidate survives
    only if it reaches the high mode, and survivors closer than
    ``merge_gap_s`` merge.
    """
    if rec.duration_s < 60.0:
        raise ValueError("sleep detection needs at least 60 s of signal")
    env = band_envelope(rec, band)
    modes, _, _ = _two_modes(env, n_bins, smooth_bins, upper_pct, min_separation, min_prominence,
                             min_relative_prominence)
    if modes is None:
        return StateEpochs("sleep", EventSet([], rec.duration_s), {}, diagnostic="unimodal")
    low, high = modes
    lower = 0.5 * (low + high)
    rate = rec.sample_rate_hz

    kept = []
    for i0, i1 in runs(env >= lower):
        if env[i0:i1].max() >= high:
            kept.append((i0 / rate, i1 / rate))
    spans = []
    for s, e in kept:
        if spans and s - spans[-1][1] < merge_gap_s:
            spans[-1] = (spans[-1][0], e)
        else:
            spans.append((s, e))
    thresholds = {"wake_mode": low, "sleep_mode": high, "lower": lower, "secondary": high,
                  "merge_gap_s": merge_gap_s}
    return StateEpochs("sleep", EventSet([(s, e, "sleep") for s, e in spans], rec.duration_s), thresholds)


def proportion_in_state(events: EventSet, state: StateEpochs | EventSet) -> float:
    """Fraction of events overlapping any state interval (0 when there are no events)."""
    spans = events.spans()
    if not spans:
        return 0.0
    state_set = state.intervals if isinstance(state, StateEpochs) else state
    return sum(_overlap_flags(spans, state_set.spans())) / len(spans)


def interval_iou(a, b) -> float:
    """Length of the intersection over length of the union of two interval collections."""
    a = merge_spans([(s, e) for s, e, *_ in a])
    b = merge_spans([(s, e) for s, e, *_ in b])
    inter = 0.0
    i = j = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        inter += max(0.0, hi - lo)
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    union = sum(e - s for s, e in a) + sum(e - s for s, e in b) - inter
    return inter / union if union > 0 else 1.0

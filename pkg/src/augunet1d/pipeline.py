"""Recording-level glue: training epochs from labeled recordings, and full-recording inference."""

from __future__ import annotations

import numpy as np

from .events import mask_to_events
from .model import ModelParams, predict_mask, predict_proba
from .preprocess import EpochPair, InputTooShort, ResampleSpec, epochize, minmax_scale, resample
from .signal_io import EventSet, Recording, events_to_mask

TARGET_RATE_HZ = 100.0
EPOCH_SECONDS = 20.0


def prepare_recording(rec: Recording, target_rate: float = TARGET_RATE_HZ,
                      half_width: int = 32) -> Recording:
    """Min-max scale to [-1, 1], then resample to ``target_rate``."""
    scaled = minmax_scale(rec)
    if scaled.sample_rate_hz == target_rate:
        return scaled
    return resample(scaled, ResampleSpec(scaled.sample_rate_hz, target_rate, half_width))


def make_epochs(rec: Recording, events: EventSet, target_rate: float = TARGET_RATE_HZ,
                epoch_seconds: float = EPOCH_SECONDS, label: str | None = "SWD") -> list[EpochPair]:
    prepared = prepare_recording(rec, target_rate)
    mask = events_to_mask(events, len(prepared), target_rate, label)
    return epochize(prepared, mask, epoch_seconds)


def predict_probabilities(params: ModelParams, rec: Recording, target_rate: float = TARGET_RATE_HZ,
                          batch_size: int = 32, prepared: bool = False) -> np.ndarray:
    """Per-sample probabilities at ``target_rate`` over the whole recording.

    Windows are consecutive and non-overlapping; the last partial window is
    zero-padded and its padded tail discarded.
    """
    x = rec if prepared else prepare_recording(rec, target_rate)
    n = params.config.input_length
    if len(x) < n:
        raise InputTooShort(f"recording has {len(x)} samples at {target_rate} Hz; one epoch needs {n}")
    count = -(-len(x) // n)
    padded = np.zeros(count * n)
    padded[:len(x)] = x.samples
    probs = predict_proba(params, padded.reshape(count, n), batch_size)
    return probs[:, 0, :].reshape(-1)[:len(x)]


def predict_recording(params: ModelParams, rec: Recording, threshold: float = 0.5,
                      min_duration_s: float = 0.5, merge_gap_s: float = 0.2,
                      target_rate: float = TARGET_RATE_HZ) -> tuple[EventSet, np.ndarray]:
    """Scale, resample, tile into epochs, run the model, threshold and post-process."""
    probs = predict_probabilities(params, rec, target_rate)
    mask = predict_mask(probs, threshold)
    events = mask_to_events(mask, target_rate, min_duration_s, merge_gap_s)
    return events, mask

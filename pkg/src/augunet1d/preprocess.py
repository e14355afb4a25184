"""Resampling, amplitude normalization and fixed-length epoching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .signal_io import Recording

DEFAULT_HALF_WIDTH = 32


class InputTooShort(ValueError):
    code = "InputTooShort"


@dataclass(frozen=True)
class ResampleSpec:
    source_rate_hz: float
    target_rate_hz: float
    kernel_half_width_zero_crossings: int = DEFAULT_HALF_WIDTH

    def __post_init__(self):
        if not (self.source_rate_hz > 0 and self.target_rate_hz > 0):
            raise ValueError("rates must be positive")
        if self.kernel_half_width_zero_crossings < 1:
            raise ValueError("kernel half-width must be >= 1")

    def ratio(self) -> Fraction:
        """Target/source rate as a reduced fraction ``up/down``."""
        src = Fraction(repr(float(self.source_rate_hz)))
        tgt = Fraction(repr(float(self.target_rate_hz)))
        return (tgt / src).limit_denominator(10_000)

    def support(self) -> int:
        """Kernel half-support in source samples."""
        scale = min(1.0, self.target_rate_hz / self.source_rate_hz)
        return int(math.ceil(self.kernel_half_width_zero_crossings / scale))


@dataclass
class EpochPair:
    signal: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.signal.shape != self.target.shape:
            raise ValueError("signal and target lengths differ")


def _phase_filters(spec: ResampleSpec, up: int, down: int):
    """One Hann-windowed sinc filter per output phase.

    Output sample ``m`` sits at source position ``m * down / up``. Its phase
    ``m % up`` fixes the fractional offset, so ``up`` filters cover every
    output. Taps for phase ``p`` apply to source indices
    ``floor(m * down / up) - half + j`` for ``j`` in ``0..2*half+1``.
    """
    scale = min(1.0, up / down)
    half = spec.support()
    width = spec.kernel_half_width_zero_crossings / scale
    j = np.arange(-half, half + 2, dtype=np.float64)
    filters = np.empty((up, j.size))
    for p in range(up):
        frac = (p * down % up) / up
        t = j - frac  # source index minus exact output position
        h = scale * np.sinc(scale * t)
        win = np.where(np.abs(t) <= width, 0.5 * (1.0 + np.cos(np.pi * t / width)), 0.0)
        h = h * win
        # unit DC gain per phase
        filters[p] = h / h.sum()
    return filters, half


def resample_array(x: np.ndarray, spec: ResampleSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if spec.source_rate_hz == spec.target_rate_hz:
        return x.copy()
    ratio = spec.ratio()
    up, down = ratio.numerator, ratio.denominator
    n_in = x.size
    half = spec.support()
    if n_in < 2 * half + 1:
        raise InputTooShort(
            f"input of {n_in} samples is shorter than the kernel support ({2 * half + 1})"
        )
    n_out = int(round(n_in * spec.target_rate_hz / spec.source_rate_hz))
    filters, half = _phase_filters(spec, up, down)
    taps = filters.shape[1]

    # zero padding outside the signal
    pad = half + 2
    xp = np.concatenate([np.zeros(pad), x, np.zeros(pad + taps)])
    windows = sliding_window_view(xp, taps)

    out = np.empty(n_out)
    m = np.arange(n_out, dtype=np.int64)
    base = (m * down) // up - half + pad
    phase = m % up
    chunk = 1 << 16
    for p in range(up):
        idx = np.flatnonzero(phase == p)
        for start in range(0, idx.size, chunk):
            sel = idx[start:start + chunk]
            out[sel] = windows[base[sel]] @ filters[p]
    return out


def resample(rec: Recording, spec: ResampleSpec) -> Recording:
    """Windowed-sinc resampling of a recording to ``spec.target_rate_hz``.

    The low-pass cutoff sits at half the lower of the two rates. Output length
    is ``round(N * target / source)``; equal rates return the samples as-is.
    """
    if not math.isclose(rec.sample_rate_hz, spec.source_rate_hz, rel_tol=1e-12):
        raise ValueError(
            f"recording rate {rec.sample_rate_hz} does not match spec source rate {spec.source_rate_hz}"
        )
    if spec.source_rate_hz == spec.target_rate_hz:
        return rec.with_samples(rec.samples.copy())
    return rec.with_samples(resample_array(rec.samples, spec), spec.target_rate_hz)


def minmax_scale_array(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    out = 2.0 * (x - lo) / (hi - lo) - 1.0
    # pin the extremes so the range is exactly [-1, 1]
    out[x == lo] = -1.0
    out[x == hi] = 1.0
    return out


def minmax_scale(rec: Recording) -> Recording:
    return rec.with_samples(minmax_scale_array(rec.samples))


def epoch_length(epoch_seconds: float, rate: float) -> int:
    return int(round(epoch_seconds * rate))


def epochize(rec: Recording, mask, epoch_seconds: float = 20.0) -> list[EpochPair]:
    """Cut aligned signal/mask into consecutive non-overlapping epochs; the tail is dropped."""
    mask = np.asarray(mask)
    if mask.size != rec.samples.size:
        raise ValueError("mask and recording lengths differ")
    n = epoch_length(epoch_seconds, rec.sample_rate_hz)
    count = rec.samples.size // n
    return [
        EpochPair(rec.samples[i * n:(i + 1) * n].copy(), mask[i * n:(i + 1) * n].astype(np.uint8))
        for i in range(count)
    ]

"""Synthetic single-channel EEG with known SWD, sleep and artifact ground truth.

Background is pink noise. SWDs are Poisson-placed bursts: a fundamental near
5.7 Hz with two decaying harmonics and a sharp spike once per cycle. Sleep
raises a slow (0.75-2.5 Hz) oscillation over ground-truth bouts. Artifacts
are short trains of alternating pulses far beyond the recording's SD.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .signal_io import EventSet, Recording

BACKGROUND_SD = 25.0  # microvolt scale
PINK_LOW_HZ = 0.05
SWD_GAP_S = 1.0
SWD_TAPER_S = 0.15
ARTIFACT_SD_RANGE = (32.0, 38.0)
ARTIFACT_PULSE_SPACING_S = 0.05


class CapacityError(ValueError):
    code = "CapacityExceeded"


@dataclass
class SynthConfig:
    duration_s: float = 3600.0
    rate_hz: float = 100.0
    swd_rate_per_hour: float = 23.55
    swd_duration_mean_s: float = 5.83
    swd_duration_sd_s: float = 2.37
    swd_duration_floor_s: float = 1.0
    swd_peak_hz_mean: float = 5.72
    swd_peak_hz_sd: float = 0.75
    swd_amplitude_ratio: float = 4.0
    sleep_fraction: float = 0.3
    sleep_amplitude_ratio: float = 3.0
    noise_events_per_hour: float = 2.0
    seed: int = 0
    subject_id: str = "synth"

    def __post_init__(self):
        if self.duration_s <= 0 or self.rate_hz <= 0:
            raise ValueError("duration_s and rate_hz must be positive")
        for name in ("swd_rate_per_hour", "noise_events_per_hour", "swd_duration_sd_s",
                     "swd_peak_hz_sd", "sleep_amplitude_ratio"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.swd_amplitude_ratio <= 1:
            raise ValueError("swd_amplitude_ratio must exceed 1")
        if not 0 <= self.sleep_fraction < 1:
            raise ValueError("sleep_fraction must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def pink_noise(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-SD noise with power spectral density proportional to 1/f above PINK_LOW_HZ."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    gain = np.zeros_like(freqs)
    band = freqs >= PINK_LOW_HZ
    gain[band] = 1.0 / np.sqrt(freqs[band])
    x = np.fft.irfft(spec * gain, n)
    return x / x.std()


def swd_waveform(f0: float, duration_s: float, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS spike-and-wave burst with short cosine tapers at both ends."""
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    phase = 2 * np.pi * f0 * t + rng.uniform(0, 2 * np.pi)
    wave = np.sin(phase) + 0.5 * np.sin(2 * phase + 0.3) + 0.25 * np.sin(3 * phase + 0.6)
    # one narrow spike per cycle, zero-mean over a cycle
    wrapped = np.angle(np.exp(1j * (phase - 1.5 * np.pi)))  # spike on the wave trough
    width = 2 * np.pi * f0 * 0.008
    spike = np.exp(-0.5 * (wrapped / width) ** 2)
    spike -= width * np.sqrt(2 * np.pi) / (2 * np.pi)
    burst = wave - 1.5 * spike
    burst /= np.sqrt(np.mean(burst ** 2))
    taper = min(int(round(SWD_TAPER_S * rate)), n // 4)
    if taper > 0:
        ramp = 0.5 * (1 - np.cos(np.pi * np.arange(taper) / taper))
        burst[:taper] *= ramp
        burst[n - taper:] *= ramp[::-1]
    return burst


def _sleep_bouts(cfg: SynthConfig, rng: np.random.Generator) -> list[tuple[float, float]]:
    if cfg.sleep_fraction <= 0:
        return []
    sleep_range = (60.0, 240.0)
    mean_wake = np.mean(sleep_range) * (1 - cfg.sleep_fraction) / cfg.sleep_fraction
    wake_range = (max(30.0, 0.5 * mean_wake), 1.5 * mean_wake)
    bouts = []
    t = rng.uniform(*wake_range)
    while t < cfg.duration_s:
        length = rng.uniform(*sleep_range)
        end = min(t + length, cfg.duration_s - 5.0)
        if end - t >= 30.0:
            bouts.append((float(t), float(end)))
        t += length + rng.uniform(*wake_range)
    return bouts


def _sleep_signal(n: int, rate: float, bouts, rng: np.random.Generator) -> np.ndarray:
    if not bouts:
        return np.zeros(n)
    t = np.arange(n) / rate
    walk = gaussian_filter1d(rng.standard_normal(n), 5 * rate, mode="wrap")
    walk /= walk.std() + 1e-12
    freq = np.clip(1.5 + 0.4 * walk, 0.75, 2.5)
    phase = 2 * np.pi * np.cumsum(freq) / rate
    amp_walk = gaussian_filter1d(rng.standard_normal(n), 3 * rate, mode="wrap")
    amp = 1.0 + 0.15 * amp_walk / (amp_walk.std() + 1e-12)
    gate = np.zeros(n)
    for start, end in bouts:
        # half amplitude exactly at the labeled boundaries, 2 s cosine ramps
        up = np.clip((t - (start - 1.0)) / 2.0, 0, 1)
        down = np.clip(((end + 1.0) - t) / 2.0, 0, 1)
        g = 0.5 * (1 - np.cos(np.pi * np.minimum(up, down)))
        gate = np.maximum(gate, g)
    return amp * np.sin(phase) * gate


def _place(intervals, duration: float, length: float, rng, gap: float, attempts: int = 2000):
    hi = duration - length - gap
    if hi <= gap:
        return None
    for _ in range(attempts):
        s = rng.uniform(gap, hi)
        if all(s + length + gap <= a or s >= b + gap for a, b in intervals):
            return s
    return None


def generate(cfg: SynthConfig):
    """Return ``(recording, swd, sleep, noise)``; identical configs give identical output."""
    rate = cfg.rate_hz
    n = int(round(cfg.duration_s * rate))
    total = n / rate
    r_bg, r_sleep, r_swd, r_noise = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))

    x = pink_noise(n, rate, r_bg)

    bouts = _sleep_bouts(cfg, r_sleep)
    x += cfg.sleep_amplitude_ratio * _sleep_signal(n, rate, bouts, r_sleep)

    # artifacts first so SWDs can avoid them
    n_noise = int(r_noise.poisson(cfg.noise_events_per_hour * total / 3600.0))
    noise_iv: list[tuple[float, float]] = []
    noise_amp: list[float] = []
    for _ in range(n_noise):
        length = r_noise.uniform(0.1, 0.4)
        s = _place(noise_iv, total, length, r_noise, gap=1.0)
        if s is None:
            raise CapacityError("cannot fit the requested artifact events")
        noise_iv.append((s, s + length))
        noise_amp.append(r_noise.uniform(*ARTIFACT_SD_RANGE))

    n_swd = int(r_swd.poisson(cfg.swd_rate_per_hour * total / 3600.0))
    expected_mass = n_swd * (cfg.swd_duration_mean_s + 2 * SWD_GAP_S)
    if expected_mass > 0.5 * total:
        raise CapacityError(
            f"{n_swd} SWDs of ~{cfg.swd_duration_mean_s} s do not fit in {total:.0f} s"
        )
    f_lo = cfg.swd_peak_hz_mean - 2 * cfg.swd_peak_hz_sd
    f_hi = cfg.swd_peak_hz_mean + 2 * cfg.swd_peak_hz_sd
    swd_iv: list[tuple[float, float]] = []
    for _ in range(n_swd):
        f0 = float(np.clip(r_swd.normal(cfg.swd_peak_hz_mean, cfg.swd_peak_hz_sd), f_lo, f_hi))
        # five clear complexes survive the end tapers with one cycle to spare
        floor = max(cfg.swd_duration_floor_s, 6.0 / f0 + 2 * SWD_TAPER_S)
        length = r_swd.normal(cfg.swd_duration_mean_s, cfg.swd_duration_sd_s)
        while length < floor:
            length = r_swd.normal(cfg.swd_duration_mean_s, cfg.swd_duration_sd_s)
        length = math.ceil(length * rate) / rate
        s = _place(swd_iv + noise_iv, total, length, r_swd, gap=SWD_GAP_S)
        if s is None:
            raise CapacityError("cannot fit the requested SWDs")
        s = math.floor(s * rate) / rate
        i0 = int(round(s * rate))
        burst = swd_waveform(f0, length, rate, r_swd)
        x[i0:i0 + burst.size] += cfg.swd_amplitude_ratio * burst
        swd_iv.append((s, s + burst.size / rate))

    # artifact amplitude is set against the final SD, which the artifacts inflate
    pulses = []
    for s, e in noise_iv:
        i0, i1 = int(round(s * rate)), int(round(e * rate))
        k = max(2, int(round((e - s) / ARTIFACT_PULSE_SPACING_S)) + 1)
        pulses.append(np.unique(np.round(np.linspace(i0, i1 - 1, k)).astype(int)))
    frac = sum(a * a * idx.size for idx, a in zip(pulses, noise_amp)) / n
    if frac >= 0.5:
        raise CapacityError("artifact energy would dominate the recording")
    sd_final = x.std() / math.sqrt(1.0 - frac)
    noise_masks = []
    for idx, a in zip(pulses, noise_amp):
        # alternating-sign pulses, first and last sample included so the label span is exact
        x[idx] += a * sd_final * np.where(np.arange(idx.size) % 2 == 0, 1.0, -1.0)
        noise_masks.append((idx[0] / rate, (idx[-1] + 1) / rate))

    rec = Recording(BACKGROUND_SD * x, rate, cfg.subject_id)
    swd = EventSet([(s, e, "SWD") for s, e in swd_iv], total)
    sleep = EventSet([(s, e, "sleep") for s, e in bouts], total)
    noise = EventSet([(s, e, "noise") for s, e in noise_masks], total)
    return rec, swd, sleep, noise

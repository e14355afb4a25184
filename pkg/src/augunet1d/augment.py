"""Training-time augmentation: amplitude scaling, additive Gaussian noise, inversion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class AugmentConfig:
    p_scale: float = 0.5
    scale_range: tuple[float, float] = (0.5, 2.0)
    p_noise: float = 0.5
    noise_level_max: float = 0.005
    p_invert: float = 0.2
    rng_seed: int = 0

    def __post_init__(self):
        self.scale_range = (float(self.scale_range[0]), float(self.scale_range[1]))
        for name in ("p_scale", "p_noise", "p_invert"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        a, b = self.scale_range
        if not (0 < a <= b):
            raise ValueError(f"scale_range must satisfy 0 < a <= b, got {self.scale_range}")
        if self.noise_level_max < 0:
            raise ValueError("noise_level_max must be non-negative")

    @classmethod
    def disabled(cls, **overrides) -> "AugmentConfig":
        base = dict(p_scale=0.0, p_noise=0.0, p_invert=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale_range"] = list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        return cls(**d)


def apply_scale(x: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("scale factor must be positive")
    return alpha * np.asarray(x)


def apply_noise(x: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x)
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    if sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma, size=x.shape).astype(x.dtype, copy=False)


def apply_invert(x: np.ndarray) -> np.ndarray:
    return -np.asarray(x)


def apply_pipeline(x: np.ndarray, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Scale, then noise, then invert; each stage fires independently with its probability.

    Every stage consumes the same number of draws whether or not it fires, so
    changing one probability does not reshuffle the others' randomness.
    """
    x = np.asarray(x)
    u_scale, u_noise, u_invert = rng.random(3)
    alpha = rng.uniform(*config.scale_range)
    level = rng.random()
    noise_rng = np.random.default_rng(rng.integers(0, 2**63))

    out = x.copy()
    if u_scale < config.p_scale:
        out = apply_scale(out, alpha)
    if u_noise < config.p_noise:
        amp_range = float(out.max() - out.min()) if out.size else 0.0
        out = apply_noise(out, level * config.noise_level_max * amp_range, noise_rng)
    if u_invert < config.p_invert:
        out = apply_invert(out)
    return out


def example_rng(seed: int, epoch: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent stream per (seed, training epoch, example index, augmentation stream)."""
    return np.random.default_rng([int(seed), int(epoch), int(index), int(stream)])

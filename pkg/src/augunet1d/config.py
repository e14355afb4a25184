"""Composite pipeline configuration shared by every command-line subcommand."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .model import UNetConfig
from .synth import SynthConfig
from .training import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    code = "InvalidConfig"


def _from_section(cls, data, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


@dataclass
class ResampleSection:
    target_rate_hz: float = 100.0
    kernel_half_width_zero_crossings: int = 32
    epoch_seconds: float = 20.0

    def __post_init__(self):
        if self.target_rate_hz <= 0 or self.epoch_seconds <= 0:
            raise ValueError("target_rate_hz and epoch_seconds must be positive")
        if self.kernel_half_width_zero_crossings < 1:
            raise ValueError("kernel_half_width_zero_crossings must be >= 1")


@dataclass
class PostSection:
    threshold: float = 0.5
    min_duration_s: float = 0.5
    merge_gap_s: float = 0.2

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must lie in [0, 1]")
        if self.min_duration_s < 0 or self.merge_gap_s < 0:
            raise ValueError("min_duration_s and merge_gap_s must be non-negative")


@dataclass
class StatesSection:
    noise_block_s: float = 5.0
    noise_k_sd: float = 20.0
    sleep_band_hz: tuple[float, float] = (0.1, 4.0)
    sleep_merge_gap_s: float = 20.0

    def __post_init__(self):
        self.sleep_band_hz = tuple(float(v) for v in self.sleep_band_hz)
        lo, hi = self.sleep_band_hz
        if not 0 < lo < hi:
            raise ValueError("sleep_band_hz must be an increasing pair of positive frequencies")
        if self.noise_block_s <= 0 or self.noise_k_sd <= 0 or self.sleep_merge_gap_s < 0:
            raise ValueError("noise_block_s and noise_k_sd must be positive, sleep_merge_gap_s non-negative")


@dataclass
class SynthSection:
    n_subjects: int = 3
    subject_prefix: str = "s"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be >= 1")
        # validate eagerly so a bad corpus spec fails before any file is written
        _from_section(SynthConfig, {k: v for k, v in self.params.items() if k not in ("seed", "subject_id")},
                      "synth.params")

    def subject(self, index: int, seed: int) -> SynthConfig:
        params = {k: v for k, v in self.params.items() if k not in ("seed", "subject_id")}
        return SynthConfig(**params, seed=seed + index, subject_id=f"{self.subject_prefix}{index}")


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    resample: ResampleSection = field(default_factory=ResampleSection)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    post: PostSection = field(default_factory=PostSection)
    states: StatesSection = field(default_factory=StatesSection)
    test_subjects: list[str] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        version = data.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}")
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        test_subjects = data.get("test_subjects", [])
        if not isinstance(test_subjects, list) or not all(isinstance(s, str) for s in test_subjects):
            raise ConfigError("test_subjects must be a list of subject ids")
        train_data = data.get("train") or {}
        misplaced = sorted(set(train_data) & {"augment", "seed", "threshold", "min_duration_s", "merge_gap_s"})
        if misplaced:
            raise ConfigError(f"keys {misplaced} belong in 'augment', 'post' or the top level, not in 'train'")
        return cls(
            seed=seed,
            synth=_from_section(SynthSection, data.get("synth"), "synth"),
            resample=_from_section(ResampleSection, data.get("resample"), "resample"),
            augment=_from_section(AugmentConfig, data.get("augment"), "augment"),
            model=_from_section(UNetConfig, data.get("model"), "model"),
            train=_from_section(TrainConfig, train_data, "train"),
            post=_from_section(PostSection, data.get("post"), "post"),
            states=_from_section(StatesSection, data.get("states"), "states"),
            test_subjects=list(test_subjects),
        )

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(data)

    def with_seed(self, seed: int | None) -> "PipelineConfig":
        if seed is not None:
            self.seed = seed
        return self

    def train_config(self) -> TrainConfig:
        """TrainConfig carrying the top-level seed, augmentation and post-processing settings."""
        d = self.train.to_dict()
        d.update(seed=self.seed, augment=self.augment.to_dict(), threshold=self.post.threshold,
                 min_duration_s=self.post.min_duration_s, merge_gap_s=self.post.merge_gap_s)
        return TrainConfig.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = {k: v for k, v in self.train.to_dict().items()
                      if k not in ("augment", "seed", "threshold", "min_duration_s", "merge_gap_s")}
        d["augment"] = self.augment.to_dict()
        d["states"]["sleep_band_hz"] = list(self.states.sleep_band_hz)
        return d

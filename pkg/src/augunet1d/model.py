"""Residual 1D U-Net, Dice loss, thresholding and checkpoint files.

Parameters live in a flat ordered mapping ``name -> ndarray``; the insertion
order produced by :func:`init_params` is the canonical order used by the
checkpoint blob. Running normalization statistics are stored alongside the
learnable arrays under names ending in ``running_mean`` / ``running_var``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_SCHEMA_VERSION = 1
BUFFER_SUFFIXES = ("running_mean", "running_var")


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 16
    kernel_size: int = 7
    convs_per_block: int = 2
    norm: bool = True
    input_length: int = 2000
    in_channels: int = 1

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.convs_per_block < 1 or self.base_channels < 1:
            raise ValueError("convs_per_block and base_channels must be >= 1")
        if self.input_length % (2 ** self.depth):
            raise ValueError(
                f"input_length {self.input_length} not divisible by 2**depth = {2 ** self.depth}"
            )

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    config: UNetConfig
    arrays: dict[str, np.ndarray]

    def learnable(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.arrays.items() if not is_buffer(k)}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def count(self, include_buffers: bool = False) -> int:
        return sum(v.size for k, v in self.arrays.items() if include_buffers or not is_buffer(k))


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


def block_layout(config: UNetConfig) -> list[tuple[str, int, int]]:
    """(prefix, in_channels, out_channels) for every residual block, in forward order."""
    d = config.depth
    layout = []
    cin = config.in_channels
    for i in range(d):
        layout.append((f"enc{i}", cin, config.channels(i)))
        cin = config.channels(i)
    layout.append(("bottleneck", cin, cin))
    below = cin
    for i in reversed(range(d)):
        c = config.channels(i)
        layout.append((f"dec{i}", below + c, c))
        below = c
    return layout


def init_params(config: UNetConfig, rng: np.random.Generator, dtype=np.float64) -> ModelParams:
    """He-normal conv weights, zero biases, unit scale / zero shift normalization."""
    arrays: dict[str, np.ndarray] = {}
    k = config.kernel_size

    def conv(name, cout, cin, ksize):
        arrays[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / (cin * ksize)), (cout, cin, ksize)).astype(dtype)
        arrays[f"{name}.b"] = np.zeros(cout, dtype=dtype)

    def norm(name, c):
        arrays[f"{name}.gamma"] = np.ones(c, dtype=dtype)
        arrays[f"{name}.beta"] = np.zeros(c, dtype=dtype)
        arrays[f"{name}.running_mean"] = np.zeros(c, dtype=dtype)
        arrays[f"{name}.running_var"] = np.ones(c, dtype=dtype)

    for prefix, cin, cout in block_layout(config):
        c = cin
        for j in range(config.convs_per_block):
            conv(f"{prefix}.conv{j}", cout, c, k)
            if config.norm:
                norm(f"{prefix}.bn{j}", cout)
            c = cout
        if cin != cout:
            conv(f"{prefix}.proj", cout, cin, 1)
    conv("out", 1, config.channels(0), 1)
    return ModelParams(config, arrays)


def _residual_block(prefix, x, p, config, training, updates):
    h = x
    for j in range(config.convs_per_block):
        h = ad.conv1d(h, p[f"{prefix}.conv{j}.w"], p[f"{prefix}.conv{j}.b"])
        if config.norm:
            bn = f"{prefix}.bn{j}"
            h, mean, var = ad.batchnorm1d(
                h, p[f"{bn}.gamma"], p[f"{bn}.beta"],
                p[f"{bn}.running_mean"].data, p[f"{bn}.running_var"].data, training,
            )
            updates[f"{bn}.running_mean"] = mean
            updates[f"{bn}.running_var"] = var
        h = ad.relu(h)
    shortcut = x
    if f"{prefix}.proj.w" in p:
        shortcut = ad.conv1d(x, p[f"{prefix}.proj.w"], p[f"{prefix}.proj.b"])
    return ad.add(h, shortcut)


def as_leaves(params: ModelParams) -> dict[str, Tensor]:
    """Wrap arrays as graph leaves; learnable ones track gradients."""
    return {k: Tensor(v, requires_grad=not is_buffer(k)) for k, v in params.arrays.items()}


def forward(params: ModelParams, x, mode: str = "eval", leaves: dict[str, Tensor] | None = None):
    """Run the network on ``x`` of shape (B, 1, L).

    Returns ``(probs, updates)`` where ``probs`` is a Tensor of shape (B, 1, L)
    and ``updates`` holds new running statistics (train mode moves them,
    eval mode returns copies).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    config = params.config
    x = ad.as_tensor(x)
    if x.data.ndim != 3 or x.shape[1] != config.in_channels:
        raise ad.ShapeError(f"expected input (B, {config.in_channels}, L), got {x.shape}")
    if x.shape[2] % (2 ** config.depth):
        raise ad.ShapeError(f"length {x.shape[2]} not divisible by 2**depth = {2 ** config.depth}")
    p = leaves if leaves is not None else as_leaves(params)
    training = mode == "train"
    updates: dict[str, np.ndarray] = {}

    skips = []
    h = x
    for i in range(config.depth):
        h = _residual_block(f"enc{i}", h, p, config, training, updates)
        skips.append(h)
        h = ad.maxpool1d_2(h)
    h = _residual_block("bottleneck", h, p, config, training, updates)
    for i in reversed(range(config.depth)):
        h = ad.nearest_upsample_2(h)
        h = ad.concat_channels(h, skips[i])
        h = _residual_block(f"dec{i}", h, p, config, training, updates)
    logits = ad.conv1d(h, p["out.w"], p["out.b"])
    return ad.sigmoid(logits), updates


def predict_proba(params: ModelParams, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode probabilities for a stack of epochs shaped (N, L) or (N, 1, L)."""
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[:, None, :]
    dtype = next(iter(params.arrays.values())).dtype
    out = []
    for start in range(0, x.shape[0], batch_size):
        probs, _ = forward(params, x[start:start + batch_size].astype(dtype), "eval")
        out.append(probs.data)
    if not out:
        return np.zeros((0, 1, x.shape[2]), dtype=dtype)
    return np.concatenate(out, axis=0)


def dice_loss(probs: Tensor, targets, smooth: float = 1.0) -> Tensor:
    """``1 - (2*sum(p*g) + smooth) / (sum(p) + sum(g) + smooth)`` over the whole batch."""
    probs = ad.as_tensor(probs)
    g = np.asarray(targets)
    if g.shape != probs.shape:
        raise ad.ShapeError(f"dice_loss shape mismatch {probs.shape} vs {g.shape}")
    p64 = probs.data.astype(np.float64)
    g64 = g.astype(np.float64)
    inter = float(np.sum(p64 * g64))
    total = float(np.sum(p64) + np.sum(g64))
    num = 2.0 * inter + smooth
    den = total + smooth
    value = 1.0 - num / den

    def backward(grad):
        d = -(2.0 * g64 * den - num) / (den * den)
        probs._accumulate((grad * d).astype(probs.dtype))

    return ad._result(np.array(value, dtype=probs.dtype), (probs,), backward, "dice_loss")


def predict_mask(probs, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(probs) >= threshold).astype(np.uint8)


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(directory, params: ModelParams, step: int = 0, metrics: dict | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus ``params.bin`` (little-endian float32, canonical order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = []
    offset = 0
    chunks = []
    for name, arr in params.arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    (directory / "params.bin").write_bytes(b"".join(chunks))
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": params.config.to_dict(),
        "step": int(step),
        "metrics": metrics or {},
        "dtype": "<f4",
        "tensors": tensors,
    }
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[ModelParams, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {manifest.get('schema_version')!r}")
    blob = (directory / "params.bin").read_bytes()
    config = UNetConfig.from_dict(manifest["config"])
    arrays = {}
    for t in manifest["tensors"]:
        raw = blob[t["offset"]:t["offset"] + t["nbytes"]]
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(t["shape"]).astype(np.float32)
    expected = init_params(config, np.random.default_rng(0))
    if list(arrays) != list(expected.arrays) or any(
        arrays[k].shape != expected.arrays[k].shape for k in arrays
    ):
        raise ValueError("checkpoint tensors do not match the model configuration")
    return ModelParams(config, arrays), manifest

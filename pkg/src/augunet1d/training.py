"""Optimizer, learning-rate schedule, training loop, repeated runs and ablation sweeps."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .augment import AugmentConfig, apply_pipeline, example_rng
from .events import score_recording
from .model import ModelParams, UNetConfig, as_leaves, dice_loss, forward, init_params, predict_mask, predict_proba
from .preprocess import EpochPair

log = logging.getLogger(__name__)

METRIC_KEYS = ("precision", "recall", "f1")


class NonFiniteGradient(FloatingPointError):
    code = "NonFiniteGradient"


class EmptyDataset(ValueError):
    code = "EmptyDataset"


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    max_epochs: int = 50
    batch_size: int = 32
    warmup_steps: int = 500
    cycle_steps: int = 1000
    lr_min: float = 1e-5
    gamma: float = 0.9
    patience_epochs: int = 10
    val_fraction: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train_fraction: float = 1.0
    threshold: float = 0.5
    min_duration_s: float = 0.5
    merge_gap_s: float = 0.2

    def __post_init__(self):
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.patience_epochs < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience_epochs, batch_size and max_epochs must be >= 1")
        if not 0 < self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in (0, 1]")
        if self.cycle_steps < 1 or self.warmup_steps < 0:
            raise ValueError("cycle_steps must be >= 1 and warmup_steps >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


# --- schedule -----------------------------------------------------------------

def cycle_peak(cycle: int, config: TrainConfig) -> float:
    return max(config.lr_max * config.gamma ** cycle, config.lr_min)


def lr_at(step: float, config: TrainConfig) -> float:
    """Linear warmup to ``lr_max``, then cosine cycles with gamma-decayed peaks.

    Warmup covers ``[0, warmup]`` and cycle ``c`` covers the half-open step
    range ``(warmup + c*cycle, warmup + (c+1)*cycle]``, so the last step of a
    cycle sits exactly at ``lr_min`` and the next step restarts near the
    decayed peak.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    w = config.warmup_steps
    if step <= w:
        return config.lr_max if w == 0 else config.lr_max * step / w
    offset = step - w
    cycle = int(math.ceil(offset / config.cycle_steps)) - 1
    t = offset - cycle * config.cycle_steps
    peak = cycle_peak(cycle, config)
    return config.lr_min + (peak - config.lr_min) * (1 + math.cos(math.pi * t / config.cycle_steps)) / 2


# --- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update, applied in place. Returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1 - beta1 ** state.t
    c2 = 1 - beta2 ** state.t
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


# --- data handling ------------------------------------------------------------

def _stack(pairs: Sequence[EpochPair]):
    x = np.stack([p.signal for p in pairs]).astype(np.float32)
    y = np.stack([p.target for p in pairs]).astype(np.float32)
    return x, y


def pool_segments(dataset) -> list[EpochPair]:
    """Flatten ``{subject: [EpochPair]}`` (or a list of lists) in a stable subject order."""
    if isinstance(dataset, Mapping):
        groups = [dataset[k] for k in sorted(dataset)]
    else:
        groups = list(dataset)
        if groups and isinstance(groups[0], EpochPair):
            groups = [groups]
    return [p for g in groups for p in g]


def fraction_subset(n_segments: int, fraction: float, seed: int) -> np.ndarray:
    """Prefix of a seeded permutation, so smaller fractions nest inside larger ones."""
    perm = np.random.default_rng([int(seed), 0xF4AC]).permutation(n_segments)
    count = int(round(fraction * n_segments))
    return perm[:max(count, 1)] if n_segments else perm


def split_indices(n_segments: int, val_fraction: float, seed: int):
    """Seeded disjoint train/validation split at segment level."""
    perm = np.random.default_rng([int(seed), 0x5B17]).permutation(n_segments)
    n_val = int(round(val_fraction * n_segments))
    n_val = min(max(n_val, 1), n_segments - 1) if n_segments > 1 else 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class EarlyStopping:
    """Tracks the best (strictly lowest) validation loss and counts stale epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record one epoch (1-based); returns True when this epoch is the new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.stale = loss, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class RunResult:
    config: dict
    model_config: dict
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    best_val_loss: float
    steps: int
    best_step: int
    params: ModelParams | None = None
    test_metrics: dict = field(default_factory=dict)
    n_train_segments: int = 0
    n_val_segments: int = 0
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "params"}
        return d


def _eval_loss(params: ModelParams, x, y, batch_size: int) -> float:
    if x.shape[0] == 0:
        return math.nan
    losses = []
    for start in range(0, x.shape[0], batch_size):
        xb = x[start:start + batch_size, None, :]
        yb = y[start:start + batch_size, None, :]
        probs, _ = forward(params, xb, "eval")
        losses.append(float(dice_loss(probs, yb).data))
    return float(np.mean(losses))


def evaluate_subjects(params: ModelParams, test, config: TrainConfig, rate: float = 100.0,
                      input_scale: float = 1.0) -> dict:
    """Per-subject and mean pointwise/eventwise scores on concatenated test epochs."""
    per_subject = {}
    items = test.items() if isinstance(test, Mapping) else enumerate(test)
    for name, pairs in items:
        if not pairs:
            continue
        x, y = _stack(pairs)
        probs = predict_proba(params, input_scale * x, config.batch_size)
        pred = predict_mask(probs[:, 0, :].reshape(-1), config.threshold)
        per_subject[str(name)] = score_recording(pred, y.reshape(-1).astype(np.uint8), rate,
                                                 config.min_duration_s, config.merge_gap_s)
    summary = {}
    for kind in ("pointwise", "eventwise"):
        summary[kind] = {
            k: float(np.mean([s[kind][k] for s in per_subject.values()])) if per_subject else 0.0
            for k in METRIC_KEYS
        }
    return {"per_subject": per_subject, "mean": summary}


def train_step(params: ModelParams, state: AdamState, xb, yb, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> float:
    """One train-mode forward/backward pass and Adam update on a (B, 1, L) batch; returns the loss."""
    leaves = as_leaves(params)
    probs, updates = forward(params, xb, "train", leaves)
    loss = dice_loss(probs, yb)
    loss.backward()
    grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
             for k, t in leaves.items() if t.requires_grad}
    adam_step(params.arrays, grads, state, lr, beta1, beta2, eps)
    params.arrays.update(updates)
    return float(loss.data)


def train(dataset, config: TrainConfig, model_config: UNetConfig | None = None, test=None,
          rate: float = 100.0, progress: Callable[[dict], None] | None = None) -> RunResult:
    """Train on pooled segments with a seeded 95/5 split and early stopping on validation Dice loss.

    Returns the best-validation checkpoint. ``test`` (``{subject: [EpochPair]}``)
    is scored with that checkpoint when given.
    """
    t0 = time.perf_counter()
    segments = pool_segments(dataset)
    if not segments:
        raise EmptyDataset("dataset has no segments")
    length = segments[0].signal.size
    model_config = model_config or UNetConfig(input_length=length)
    if model_config.input_length != length:
        model_config = replace(model_config, input_length=length)

    chosen = fraction_subset(len(segments), config.train_fraction, config.seed)
    if config.train_fraction < 1:
        segments = [segments[i] for i in np.sort(chosen)]
    x_all, y_all = _stack(segments)
    tr_idx, va_idx = split_indices(len(segments), config.val_fraction, config.seed)
    x_tr, y_tr = x_all[tr_idx], y_all[tr_idx]
    x_va, y_va = x_all[va_idx], y_all[va_idx]

    params = init_params(model_config, np.random.default_rng([config.seed, 0x1417]), np.float32)
    state = AdamState()
    stopper = EarlyStopping(config.patience_epochs)
    best = params.copy()
    best_step = 0
    train_hist, val_hist = [], []
    step = 0
    shuffle_rng = np.random.default_rng([config.seed, 0x5EED])

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(x_tr.shape[0])
        batch_losses = []
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = np.stack([
                apply_pipeline(x_tr[i], config.augment, example_rng(config.seed, epoch, int(tr_idx[i]),
                                                               config.augment.rng_seed))
                for i in idx
            ])[:, None, :].astype(np.float32)
            yb = y_tr[idx][:, None, :]
            # the first update already uses a non-zero rate
            step += 1
            loss = train_step(params, state, xb, yb, lr_at(step, config), config.beta1, config.beta2, config.eps)
            batch_losses.append(loss)

        train_hist.append(float(np.mean(batch_losses)))
        val_loss = _eval_loss(params, x_va, y_va, config.batch_size)
        val_hist.append(val_loss)
        if stopper.update(epoch, val_loss):
            best = params.copy()
            best_step = step
        info = {"epoch": epoch, "train_loss": train_hist[-1], "val_loss": val_loss, "step": step,
                "lr": lr_at(step, config)}
        log.info("epoch %(epoch)d train %(train_loss).4f val %(val_loss).4f lr %(lr).2e", info)
        if progress:
            progress(info)
        if stopper.should_stop:
            break

    result = RunResult(
        config=config.to_dict(),
        model_config=model_config.to_dict(),
        train_loss=train_hist,
        val_loss=val_hist,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best,
        steps=step,
        best_step=best_step,
        params=best,
        n_train_segments=int(tr_idx.size),
        n_val_segments=int(va_idx.size),
    )
    if test:
        result.test_metrics = evaluate_subjects(best, test, config, rate)
    result.wall_clock_s = time.perf_counter() - t0
    return result


# --- repeated runs and sweeps -------------------------------------------------

def _flatten_metrics(metrics: dict) -> dict[str, float]:
    mean = metrics.get("mean", {})
    return {f"{kind}_{k}": float(v) for kind, d in mean.items() for k, v in d.items()}


def aggregate_runs(run_metrics: list[dict]) -> dict:
    """Per-metric mean and sample SD (SD is 0 for a single run)."""
    flat = [_flatten_metrics(m) for m in run_metrics]
    keys = sorted(flat[0]) if flat else []
    mean = {k: float(np.mean([f[k] for f in flat])) for k in keys}
    sd = {k: float(np.std([f[k] for f in flat], ddof=1)) if len(flat) > 1 else 0.0 for k in keys}
    return {"n": len(flat), "runs": run_metrics, "mean": mean, "sd": sd}


def run_repeated(dataset, config: TrainConfig, n: int = 3, model_config: UNetConfig | None = None,
                 test=None, rate: float = 100.0, train_fn=train) -> dict:
    if n < 1:
        raise ValueError("n must be >= 1")
    metrics = []
    for i in range(n):
        res = train_fn(dataset, replace(config, seed=config.seed + i), model_config, test, rate)
        metrics.append(res.test_metrics)
    return aggregate_runs(metrics)


AUGMENT_ROWS = ("none", "noise", "invert", "scaling", "all")
FRACTION_GRID = (0.05, 0.10, 0.25, 0.50, 0.75, 0.90)
PSCALE_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)
SWEEP_AXES = {"augment": "augmentation", "augmentation": "augmentation", "augmentations": "augmentation",
              "fraction": "train_fraction", "train_fraction": "train_fraction",
              "pscale": "p_scale", "p_scale": "p_scale"}


def augment_variant(base: AugmentConfig, name: str) -> AugmentConfig:
    off = dict(p_scale=0.0, p_noise=0.0, p_invert=0.0)
    if name == "none":
        return replace(base, **off)
    if name == "noise":
        return replace(base, **{**off, "p_noise": base.p_noise})
    if name == "invert":
        return replace(base, **{**off, "p_invert": base.p_invert})
    if name == "scaling":
        return replace(base, **{**off, "p_scale": base.p_scale})
    if name == "all":
        return base
    raise ValueError(f"unknown augmentation variant {name!r}")


def sweep_grid(config: TrainConfig, axis: str, n_segments: int | None = None) -> list[tuple[dict, TrainConfig]]:
    """Grid points for one ablation axis as ``(row_labels, config)`` pairs."""
    kind = SWEEP_AXES.get(axis)
    if kind is None:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from augment, fraction, pscale")
    points = []
    if kind == "augmentation":
        for name in AUGMENT_ROWS:
            points.append(({"augmentation": name}, replace(config, augment=augment_variant(config.augment, name))))
    elif kind == "train_fraction":
        for f in FRACTION_GRID:
            row = {"train_fraction": f}
            if n_segments is not None:
                row["n_segments"] = int(fraction_subset(n_segments, f, config.seed).size)
            points.append((row, replace(config, train_fraction=f)))
    else:
        for p in PSCALE_GRID:
            points.append(({"p_scale": p}, replace(config, augment=replace(config.augment, p_scale=p))))
    return points


def sweep(dataset, config: TrainConfig, axis: str, model_config: UNetConfig | None = None, test=None,
          rate: float = 100.0, train_fn=train) -> list[dict]:
    """One training per grid point; rows carry pointwise precision/recall/F1 on ``test``."""
    n_segments = len(pool_segments(dataset))
    rows = []
    for labels, cfg in sweep_grid(config, axis, n_segments):
        res = train_fn(dataset, cfg, model_config, test, rate)
        mean = res.test_metrics.get("mean", {}).get("pointwise", {})
        rows.append({**labels, **{k: float(mean.get(k, 0.0)) for k in METRIC_KEYS}})
    return rows

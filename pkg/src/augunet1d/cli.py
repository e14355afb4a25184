"""Command-line entry point: ``augunet1d <command> ...``.

Every command reads a validated ``PipelineConfig`` (defaults when ``--config``
is omitted), draws all randomness from ``--seed`` and writes deterministic
output. Failures exit nonzero with a one-line JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, ConfigError, PipelineConfig
from .events import event_stats, eventwise_metrics, pointwise_metrics
from .model import load_checkpoint, save_checkpoint
from .pipeline import make_epochs, predict_recording
from .preprocess import ResampleSpec, resample
from .signal_io import EventSet, Recording, events_to_mask, load_labels, load_signal, save_labels, save_signal
from .states import detect_noise, detect_sleep
from .synth import generate
from .training import sweep, train

log = logging.getLogger("augunet1d")

LABEL_KINDS = ("swd", "sleep", "noise")
SVG_COLORS = ("#d62728", "#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd")


class UsageError(ValueError):
    code = "UsageError"


def _write_json(path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- data directory layout ----------------------------------------------------
# <sid>.f32 + <sid>.json (sidecar) and <sid>.swd.csv / .sleep.csv / .noise.csv

def write_subject(directory, rec: Recording, labels: dict[str, EventSet]) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_signal(rec, directory / f"{rec.subject_id}.f32")
    for kind, events in labels.items():
        save_labels(events, directory / f"{rec.subject_id}.{kind}.csv")


def list_subjects(directory) -> list[str]:
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"data directory {directory} does not exist")
    subjects = sorted(p.stem for p in directory.glob("*.f32"))
    if not subjects:
        raise UsageError(f"no <subject>.f32 recordings in {directory}")
    return subjects


def load_subject(directory, sid: str) -> tuple[Recording, EventSet]:
    directory = Path(directory)
    rec = load_signal(directory / f"{sid}.f32")
    label_path = directory / f"{sid}.swd.csv"
    if not label_path.exists():
        raise UsageError(f"missing labels {label_path}")
    return rec, load_labels(label_path, rec.duration_s)


def load_corpus(directory, cfg: PipelineConfig):
    """Epoch every subject; subjects named in ``test_subjects`` are held out."""
    train_set, test_set = {}, {}
    subjects = list_subjects(directory)
    missing = set(cfg.test_subjects) - set(subjects)
    if missing:
        raise UsageError(f"test subjects not found in data: {sorted(missing)}")
    for sid in subjects:
        rec, events = load_subject(directory, sid)
        pairs = make_epochs(rec, events, cfg.resample.target_rate_hz, cfg.resample.epoch_seconds)
        (test_set if sid in cfg.test_subjects else train_set)[sid] = pairs
    return train_set, test_set


def _model_config(cfg: PipelineConfig):
    length = int(round(cfg.resample.epoch_seconds * cfg.resample.target_rate_hz))
    return replace(cfg.model, input_length=length)


# --- commands -------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> dict:
    written = []
    for i in range(cfg.synth.n_subjects):
        rec, swd, sleep, noise = generate(cfg.synth.subject(i, cfg.seed))
        write_subject(args.out, rec, {"swd": swd, "sleep": sleep, "noise": noise})
        written.append({"subject_id": rec.subject_id, "samples": len(rec), "swd_events": len(swd),
                        "sleep_epochs": len(sleep), "noise_events": len(noise)})
    manifest = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "subjects": written}
    _write_json(Path(args.out) / "corpus.json", manifest)
    return {"subjects": len(written)}


def cmd_resample(args, cfg: PipelineConfig) -> dict:
    rec = load_signal(args.input)
    rate = args.rate if args.rate is not None else cfg.resample.target_rate_hz
    spec = ResampleSpec(rec.sample_rate_hz, rate, cfg.resample.kernel_half_width_zero_crossings)
    out = resample(rec, spec)
    save_signal(out, args.out)
    return {"samples_in": len(rec), "samples_out": len(out), "rate_hz": rate}


def cmd_train(args, cfg: PipelineConfig) -> dict:
    train_set, test_set = load_corpus(args.data, cfg)
    tcfg = cfg.train_config()
    res = train(train_set, tcfg, _model_config(cfg), test_set or None, cfg.resample.target_rate_hz)
    post = {"threshold": cfg.post.threshold, "min_duration_s": cfg.post.min_duration_s,
            "merge_gap_s": cfg.post.merge_gap_s}
    save_checkpoint(args.out, res.params, res.best_step,
                    {"best_val_loss": res.best_val_loss, "best_epoch": res.best_epoch},
                    {"post": post, "target_rate_hz": cfg.resample.target_rate_hz})
    summary = res.to_dict()
    # wall clock would break byte-identical reruns of the report
    summary.pop("wall_clock_s")
    summary.update(schema_version=SCHEMA_VERSION, train_subjects=sorted(train_set),
                   test_subjects=sorted(test_set))
    _write_json(Path(args.out) / "run.json", summary)
    log.info("training wall clock %.1f s", res.wall_clock_s)
    return {"best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss}


def cmd_predict(args, cfg: PipelineConfig) -> dict:
    params, manifest = load_checkpoint(args.ckpt)
    post = manifest.get("post", {})
    rate = manifest.get("target_rate_hz", cfg.resample.target_rate_hz)
    rec = load_signal(args.input)
    events, _ = predict_recording(
        params, rec,
        threshold=post.get("threshold", cfg.post.threshold),
        min_duration_s=post.get("min_duration_s", cfg.post.min_duration_s),
        merge_gap_s=post.get("merge_gap_s", cfg.post.merge_gap_s),
        target_rate=rate,
    )
    # events live on the model's time grid; clamp to the input's duration
    events = EventSet([(s, min(e, rec.duration_s), lab) for s, e, lab in events if s < rec.duration_s],
                      rec.duration_s)
    save_labels(events, args.out)
    return {"events": len(events)}


def cmd_eval(args, cfg: PipelineConfig) -> dict:
    rec = load_signal(args.signal) if args.signal else None
    total = rec.duration_s if rec else math.inf
    pred = load_labels(args.pred, total).only("SWD")
    truth = load_labels(args.truth, total).only("SWD")
    if rec is not None:
        n, rate = len(rec), rec.sample_rate_hz
    else:
        rate = args.rate
        end = max([e for _, e in pred.spans() + truth.spans()] + [0.0])
        n = int(math.ceil(end * rate))
    pw = pointwise_metrics(events_to_mask(pred, n, rate), events_to_mask(truth, n, rate))
    ew = eventwise_metrics(pred, truth)
    duration = n / rate
    report = {
        "schema_version": SCHEMA_VERSION,
        "pointwise": pw.to_dict(),
        "eventwise": ew.to_dict(),
        "features": {
            "pred": event_stats(pred, duration, rec).to_dict(),
            "truth": event_stats(truth, duration, rec).to_dict(),
        },
    }
    _write_json(args.out, report)
    return {"pointwise_f1": pw.f1, "eventwise_f1": ew.f1}


def cmd_states(args, cfg: PipelineConfig) -> dict:
    rec = load_signal(args.input)
    s = cfg.states
    noise = detect_noise(rec, s.noise_block_s, s.noise_k_sd)
    sleep = detect_sleep(rec, s.sleep_band_hz, s.sleep_merge_gap_s)
    combined = EventSet(list(noise.intervals) + list(sleep.intervals), rec.duration_s)
    save_labels(combined, args.out)
    if args.report:
        _write_json(args.report, {"schema_version": SCHEMA_VERSION, "noise": noise.to_dict(),
                                  "sleep": sleep.to_dict()})
    return {"noise_epochs": len(noise.intervals), "sleep_epochs": len(sleep.intervals),
            "sleep_diagnostic": sleep.diagnostic}


def cmd_sweep(args, cfg: PipelineConfig) -> dict:
    train_set, test_set = load_corpus(args.data, cfg)
    if not test_set:
        raise UsageError("sweep needs held-out subjects; set test_subjects in the config")
    rows = sweep(train_set, cfg.train_config(), args.axis, _model_config(cfg), test_set,
                 cfg.resample.target_rate_hz)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    _write_json(out.with_suffix(".json"), {"schema_version": SCHEMA_VERSION, "axis": args.axis, "rows": rows})
    return {"rows": len(rows)}


def render_svg(rec: Recording, label_sets: list[EventSet], start_s: float, window_s: float,
               width: int = 1200, height: int = 300) -> str:
    """Static trace with one shaded band per label file; pure vector, fixed formatting."""
    rate = rec.sample_rate_hz
    i0 = max(int(math.floor(start_s * rate)), 0)
    i1 = min(int(math.ceil((start_s + window_s) * rate)), len(rec))
    if i1 <= i0:
        raise UsageError("render window lies outside the recording")
    seg = rec.samples[i0:i1]
    lo, hi = float(seg.min()), float(seg.max())
    span = hi - lo if hi > lo else 1.0
    margin = 20
    band_h = 8
    plot_top = margin + band_h * len(label_sets) + 4
    plot_h = height - plot_top - margin

    def x_of(t):
        return margin + (t - start_s) / window_s * (width - 2 * margin)

    def y_of(v):
        return plot_top + (hi - v) / span * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for k, events in enumerate(label_sets):
        color = SVG_COLORS[k % len(SVG_COLORS)]
        for s, e in events.spans():
            if e <= start_s or s >= start_s + window_s:
                continue
            xs, xe = x_of(max(s, start_s)), x_of(min(e, start_s + window_s))
            parts.append(f'<rect x="{xs:.2f}" y="{margin + k * band_h:.2f}" width="{xe - xs:.2f}" '
                         f'height="{band_h - 2}" fill="{color}"/>')
            parts.append(f'<rect x="{xs:.2f}" y="{plot_top:.2f}" width="{xe - xs:.2f}" height="{plot_h:.2f}" '
                         f'fill="{color}" fill-opacity="0.12"/>')
    t = (np.arange(i0, i1) / rate)
    points = " ".join(f"{x_of(tt):.2f},{y_of(v):.2f}" for tt, v in zip(t, seg))
    parts.append(f'<polyline fill="none" stroke="#000000" stroke-width="0.6" points="{points}"/>')
    parts.append(f'<text x="{margin}" y="{height - 4}" font-family="monospace" font-size="10">'
                 f'{rec.subject_id} {start_s:.1f}-{start_s + window_s:.1f} s</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_render(args, cfg: PipelineConfig) -> dict:
    rec = load_signal(args.input)
    sets = [load_labels(p, rec.duration_s) for p in args.labels.split(",")] if args.labels else []
    svg = render_svg(rec, sets, args.start, args.window)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    return {"bytes": len(svg)}


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="augunet1d", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="pipeline config JSON (defaults when omitted)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a synthetic corpus")
    p.add_argument("--out", required=True)

    p = add("resample", cmd_resample, "resample one recording")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--rate", type=float)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train on a data directory; writes checkpoint and run.json")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("predict", cmd_predict, "predict SWD intervals for one recording")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "score predicted against true intervals")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--signal")
    p.add_argument("--rate", type=float, default=100.0, help="mask rate when no signal is given")
    p.add_argument("--out", required=True)

    p = add("states", cmd_states, "detect noise and sleep epochs")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="optional JSON with thresholds and diagnostics")

    p = add("sweep", cmd_sweep, "run one ablation axis")
    p.add_argument("--axis", required=True, choices=["augment", "fraction", "pscale"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, "draw a trace window with label bands as SVG")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--labels", help="comma-separated label CSVs")
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--window", type=float, default=60.0)
    p.add_argument("--out", required=True)
    return parser


def _error(exc: BaseException) -> dict:
    code = getattr(exc, "code", None) or type(exc).__name__
    return {"error": code, "message": str(exc)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = PipelineConfig.load(args.config).with_seed(args.seed)
        summary = args.func(args, cfg)
    except (ValueError, OSError, KeyError, FloatingPointError) as exc:
        print(json.dumps(_error(exc), sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, **summary}, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

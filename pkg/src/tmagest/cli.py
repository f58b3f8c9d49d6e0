"""Command-line surface tying the pipeline together.

Subcommands:
    synth      generate a labeled synthetic session (recording + annotations)
    calibrate  fit the onset threshold from labeled recordings
    train      extract windows, fit normalization, train, write a model file
    run        replay a recording (or stdin rows) through the engine, JSONL out
    eval       score a model against a labeled recording
    bench      microbenchmark of the single-prediction path

Configuration comes from an optional JSON file (--config) with individual
flag overrides on top.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import cnn, io, pipeline, synth
from .config import SessionConfig
from .engine import Engine, event_to_dict, iter_batches, run_replay
from .errors import RecordingParseError, TmagestError
from .onset import ThresholdCalibration, calibrate_threshold
from .recording import Recording
from .tma import fit_normalization, normalize_array

_CONFIG_FLAGS = (
    ("--fs", "sample_rate", float, "sampling rate in Hz"),
    ("--channels", "channels", int, "electrode channel count"),
    ("--cutoff", "envelope_cutoff_hz", float, "envelope low-pass cutoff (Hz)"),
    ("--map-width", "map_width", int, "activation-map window (samples)"),
    ("--map-stride", "map_stride", int, "map evaluation stride (samples)"),
    ("--refractory", "refractory", int, "detection pause (samples)"),
    ("--extract-width", "extraction_width", int, "training window (samples)"),
    ("--threshold-multiplier", "threshold_multiplier", float,
     "calibration multiplier"),
    ("--conv1-filters", "conv1_filters", int, "first conv layer filters"),
    ("--conv2-filters", "conv2_filters", int, "second conv layer filters"),
    ("--batch-size", "batch_size", int, "SGD mini-batch size"),
    ("--learning-rate", "learning_rate", float, "SGD learning rate"),
    ("--epochs", "epochs", int, "SGD epochs"),
    ("--seed", "seed", int, "master seed"),
)


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=f"cfg_{dest}", type=typ, default=None,
                            help=help_text)
    parser.add_argument("--gestures", dest="cfg_gestures", default=None,
                        help="comma-separated gesture labels")


def _load_config(args: argparse.Namespace,
                 fallback: SessionConfig | None = None) -> SessionConfig:
    """File config if given, else the fallback (e.g. the one stored in a
    model file), else defaults; explicit flags override either."""
    if args.config:
        base = SessionConfig.load(args.config)
    elif fallback is not None:
        base = fallback
    else:
        base = SessionConfig()
    overrides = {}
    for _, dest, _, _ in _CONFIG_FLAGS:
        value = getattr(args, f"cfg_{dest}")
        if value is not None:
            overrides[dest] = value
    if args.cfg_gestures is not None:
        overrides["gestures"] = tuple(
            g.strip() for g in args.cfg_gestures.split(",") if g.strip())
    return SessionConfig.from_dict({**base.to_dict(), **overrides}) \
        if overrides else base


def _cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args)
    seed = config.seed if args.session_seed is None else args.session_seed
    templates = synth.default_template_set(config.channels, config.gestures,
                                           separation=args.separation)
    for tpl in templates.values():
        tpl.rise_s = args.rise
        tpl.hold_s = args.hold
        tpl.fall_s = args.fall
        tpl.burst_gain = args.burst
        tpl.settle_s = args.settle
    common = dict(rest_s=args.rest, lead_s=args.lead,
                  noise_floor=args.noise_floor, snr_db=args.snr, seed=seed,
                  carrier_compression=args.compression)
    if args.mode == "blocked":
        script = synth.blocked_script(config.gestures, templates,
                                      repetitions=args.reps, **common)
    else:
        rng = cnn.derive_rng(seed, "sequence")
        script = synth.balanced_sequence_script(config.gestures, templates,
                                                count=args.events, rng=rng,
                                                **common)
    recording = synth.generate(script, templates, config)
    io.write_recording(recording, args.out)
    print(f"wrote {recording.num_samples} samples "
          f"({recording.num_samples / config.sample_rate:.1f} s), "
          f"{len(recording.annotations)} annotations -> {args.out}")
    return 0


def _read_recordings(paths, config: SessionConfig) -> list[Recording]:
    return [io.read_recording(p, config.sample_rate,
                              expected_channels=config.channels)
            for p in paths]


def _calibration_from_recordings(recordings, config) -> ThresholdCalibration:
    segments = []
    for rec in recordings:
        segments.extend(pipeline.calibration_segments(rec, config))
    return calibrate_threshold(segments, config.threshold_multiplier,
                               expected_gestures=config.gestures)


def _print_calibration(cal: ThresholdCalibration) -> None:
    width = max(len(g) for g in cal.per_gesture_sigma) + 2
    for gesture in sorted(cal.per_gesture_sigma):
        print(f"{gesture:<{width}} sigma = {cal.per_gesture_sigma[gesture]:.6g}")
    print(f"threshold = {cal.multiplier:g} x mean(sigma) = {cal.threshold:.6g}")


def _cmd_calibrate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    recordings = _read_recordings(args.recordings, config)
    cal = _calibration_from_recordings(recordings, config)
    _print_calibration(cal)
    if args.out:
        io_dict = {"per_gesture_sigma": cal.per_gesture_sigma,
                   "threshold": cal.threshold, "multiplier": cal.multiplier,
                   "degenerate": cal.degenerate}
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(io_dict, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote calibration -> {args.out}")
    return 0


def _load_calibration(path) -> ThresholdCalibration:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return ThresholdCalibration(**data)


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    recordings = _read_recordings(args.recordings, config)
    if args.calibration:
        calibration = _load_calibration(args.calibration)
    else:
        calibration = _calibration_from_recordings(recordings, config)

    examples = []
    for rec in recordings:
        examples.extend(pipeline.extract_training_set(rec, config))
    print(f"extracted {len(examples)} training maps from "
          f"{len(recordings)} recording(s)")
    bounds = fit_normalization(ex.map for ex in examples)
    channels = config.channels
    for ex in examples:
        ex.map = dataclasses.replace(
            ex.map, data=normalize_array(ex.map.data, bounds, channels))

    def log_epoch(epoch, loss):
        print(f"epoch {epoch + 1:>3}/{config.epochs}: loss {loss:.6f}")

    model = cnn.train(examples, config, bounds=bounds,
                      calibration=calibration, log_epoch=log_epoch)
    io.write_model(model, args.out)
    print(f"wrote model -> {args.out}")
    return 0


def _stdin_events(model, config: SessionConfig, suppress):
    """Incremental engine over stdin rows: one stride in, events out."""
    engine = Engine(model, config, suppress_alternate=suppress)
    batch = np.empty((config.map_stride, config.channels))
    filled = 0
    for i, line in enumerate(sys.stdin, start=1):
        line = line.strip()
        if not line or line.startswith("t,"):
            continue
        parts = line.split(",")
        if len(parts) != config.channels + 1:
            raise RecordingParseError(
                f"row has {len(parts)} columns, expected "
                f"{config.channels + 1}", line=i)
        try:
            batch[filled] = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise RecordingParseError(str(exc), line=i) from exc
        filled += 1
        if filled == config.map_stride:
            filled = 0
            event = engine.step(batch)
            if event is not None:
                yield event


def _cmd_run(args: argparse.Namespace) -> int:
    model = io.read_model(args.model)
    config = _load_config(args, fallback=model.config)
    suppress = False if args.no_suppression else None
    if args.input == "-":
        events = _stdin_events(model, config, suppress)
    else:
        recording = io.read_recording(args.input, config.sample_rate,
                                      expected_channels=config.channels)
        events = run_replay(recording, model, config, pacing=args.pacing,
                            suppress_alternate=suppress)
    for event in events:
        print(json.dumps(event_to_dict(event,
                                       include_timing=not args.no_timing)),
              flush=True)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model = io.read_model(args.model)
    config = _load_config(args, fallback=model.config)
    recording = io.read_recording(args.input, config.sample_rate,
                                  expected_channels=config.channels)
    report = pipeline.evaluate(model, recording, config)
    print(report.format_table())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote report -> {args.report}")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    model = io.read_model(args.model)
    config = _load_config(args, fallback=model.config)
    # Force the full classify path on every stride: threshold below any
    # difference value, refractory at its minimum, suppression off.
    bench_config = dataclasses.replace(config,
                                       refractory=config.map_stride)
    engine = Engine(model, bench_config, threshold=-1.0,
                    suppress_alternate=False)
    rng = np.random.default_rng(config.seed)
    noise = rng.normal(size=(config.map_stride * (args.iterations + 20),
                             config.channels))
    timings = []
    for batch in iter_batches(noise, config.map_stride):
        event = engine.step(batch)
        if event is not None:
            timings.append(event.compute_micros)
    timings = np.array(timings[-args.iterations:])
    print(f"predictions: {timings.size}")
    print(f"mean  {timings.mean():10.1f} us")
    print(f"p50   {np.percentile(timings, 50):10.1f} us")
    print(f"p95   {np.percentile(timings, 95):10.1f} us")
    print(f"max   {timings.max():10.1f} us")
    budget_us = config.map_stride / config.sample_rate * 1e6
    print(f"stride budget {budget_us:.0f} us; "
          f"mean uses {timings.mean() / budget_us * 100:.1f}% of it")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tmagest",
        description="Real-time sEMG gesture recognition with activation maps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic session")
    _add_config_args(p)
    p.add_argument("--out", required=True, type=Path, help="recording CSV path")
    p.add_argument("--mode", choices=("blocked", "sequence"), default="blocked")
    p.add_argument("--reps", type=int, default=20,
                   help="repetitions per gesture (blocked mode)")
    p.add_argument("--events", type=int, default=150,
                   help="total events (sequence mode)")
    p.add_argument("--hold", type=float, default=5.0, help="hold seconds")
    p.add_argument("--rest", type=float, default=5.0, help="rest seconds")
    p.add_argument("--rise", type=float, default=0.05, help="rise seconds")
    p.add_argument("--fall", type=float, default=0.10, help="fall seconds")
    p.add_argument("--burst", type=float, default=2.0,
                   help="onset/release burst relative to the hold level")
    p.add_argument("--settle", type=float, default=0.15,
                   help="burst settle seconds")
    p.add_argument("--compression", type=float, default=0.2,
                   help="carrier amplitude compression exponent (1 = Gaussian)")
    p.add_argument("--lead", type=float, default=3.0, help="lead-in seconds")
    p.add_argument("--snr", type=float, default=20.0, help="hold SNR in dB")
    p.add_argument("--noise-floor", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=0.8,
                   help="max pairwise cosine of gesture gain patterns")
    p.add_argument("--session-seed", type=int, default=None,
                   help="noise seed (defaults to config seed)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("calibrate", help="fit the onset threshold")
    _add_config_args(p)
    p.add_argument("--recording", dest="recordings", action="append",
                   required=True, type=Path,
                   help="labeled recording (repeatable)")
    p.add_argument("--out", type=Path, default=None, help="calibration JSON")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("train", help="extract, normalize, train, save model")
    _add_config_args(p)
    p.add_argument("--recording", dest="recordings", action="append",
                   required=True, type=Path,
                   help="labeled recording (repeatable)")
    p.add_argument("--calibration", type=Path, default=None,
                   help="calibration JSON (default: calibrate from the "
                        "training recordings)")
    p.add_argument("--out", required=True, type=Path, help="model file path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("run", help="stream a recording through the engine")
    _add_config_args(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input", required=True,
                   help="recording CSV path, or - for stdin rows")
    p.add_argument("--pacing", choices=("fast", "realtime"), default="fast")
    p.add_argument("--no-suppression", action="store_true",
                   help="classify every onset (no return-onset exemption)")
    p.add_argument("--no-timing", action="store_true",
                   help="omit compute_us from output (byte-reproducible)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="score a model on a labeled recording")
    _add_config_args(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--input", required=True, type=Path)
    p.add_argument("--report", type=Path, default=None, help="report JSON path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="latency microbenchmark of one prediction")
    _add_config_args(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--iterations", type=int, default=200)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TmagestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

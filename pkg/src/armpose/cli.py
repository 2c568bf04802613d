"""Command-line entry point: one binary, eight subcommands.

    synth      generate synthetic sessions (sensor.csv, truth.csv, paired.csv)
    calibrate  capture a calibration state from a recorded session
    train      fit an estimator on recorded sessions
    eval       score a trained model on a dataset
    bench      cross-validated architecture x codec benchmark matrix
    emulate    stream a synthetic session over UDP (or write a capture file)
    serve      run the real-time pose server (live UDP or capture replay)
    infer      offline Monte-Carlo inference over a recorded session

Exit codes: 0 success, 1 runtime failure (single JSON line on stderr),
2 usage error. All randomness is keyed by --seed; flags win over --config
values, which win over defaults.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .emulator import EmuConfig, synth_session
from .errors import ArmPoseError
from .evaluation import (
    BENCH_CELLS,
    assemble_sessions,
    bench_matrix,
    evaluate_model,
    synth_benchmark_dataset,
)
from .frames import (
    calibrate_from_frames,
    merge_nearest,
    read_sensor_csv,
    read_truth_csv,
    write_paired_csv,
    write_sensor_csv,
    write_truth_csv,
)
from .inference import ModeConfig
from .network import Hyper, ModelSpec, load_model, save_model, train, write_history_csv
from .streaming import ServeConfig, capture_packets, emulator_run, serve_run
from .wire import read_capture, write_capture

_log = logging.getLogger(__name__)

_ARCH_NAMES = {"ff": "feedforward", "rnn": "recurrent"}


def _address(text):
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"address must be host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad port in {text!r}") from None


def _cells(text):
    cells = []
    for part in text.split(","):
        arch, sep, codec = part.strip().partition(":")
        if not sep or arch not in _ARCH_NAMES or codec not in ("polar", "xyz", "sixd", "quat"):
            raise argparse.ArgumentTypeError(
                f"cell must be ff|rnn:polar|xyz|sixd|quat, got {part!r}"
            )
        cells.append((_ARCH_NAMES[arch], codec))
    return tuple(cells)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="armpose",
        description="Arm pose estimation from a single wrist-worn device.",
    )
    parser.add_argument("--version", action="version", version=f"armpose {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", type=Path, default=None,
                        help="JSON file with flag defaults (flags win)")
    common.add_argument("--verbose", action="store_true", help="info-level logging")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic sessions")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--duration", type=float, default=30.0, help="seconds per session")
    p.add_argument("--sensor-rate", type=float, default=50.0)
    p.add_argument("--truth-rate", type=float, default=120.0)
    p.add_argument("--cal-window", type=float, default=3.0)
    p.add_argument("--pressure-offset", type=float, default=None,
                   help="session pressure offset in hPa (default: random +-15)")
    p.add_argument("--l-u", type=float, default=0.30, help="upper arm length m")
    p.add_argument("--l-l", type=float, default=0.25, help="lower arm length m")
    p.add_argument("--tolerance", type=float, default=25.0, help="pairing tolerance ms")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", parents=[common], help="capture calibration state")
    p.add_argument("--data", type=Path, required=True, help="session directory")
    p.add_argument("--window", type=float, default=3.0, help="calibration window s")
    p.add_argument("--out", type=Path, required=True, help="calibration JSON path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train", parents=[common], help="train an estimator")
    p.add_argument("--data", type=Path, required=True,
                   help="session directory or directory of session_* subdirs")
    p.add_argument("--arch", choices=sorted(_ARCH_NAMES), required=True)
    p.add_argument("--codec", choices=["polar", "xyz", "sixd", "quat"], required=True)
    p.add_argument("--out", type=Path, required=True, help="model file path")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--cal-window", type=float, default=3.0)
    p.add_argument("--history", type=Path, default=None, help="loss history CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a model on a dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None, help="metrics JSON path")
    p.add_argument("--cal-window", type=float, default=3.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common],
                       help="architecture x codec benchmark matrix")
    p.add_argument("--data", type=Path, default=None,
                   help="existing dataset directory (default: synthesize)")
    p.add_argument("--samples", type=int, default=20_000,
                   help="synthetic dataset size when --data is absent")
    p.add_argument("--sessions", type=int, default=4)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--k", type=int, default=10, help="cross-validation folds")
    p.add_argument("--cells", type=_cells, default=BENCH_CELLS,
                   help="comma list like rnn:sixd,ff:quat (default: all 8)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--fold-limit", type=int, default=None,
                   help="run only the first folds of each cell (CI smoke)")
    p.add_argument("--cal-window", type=float, default=3.0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("emulate", parents=[common],
                       help="stream a synthetic session over UDP")
    p.add_argument("--target", type=_address, default=None, help="host:port")
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--rate", type=float, default=50.0)
    p.add_argument("--cal-window", type=float, default=3.0)
    p.add_argument("--capture", type=Path, default=None,
                   help="also write the packet stream to this file")
    p.add_argument("--no-pace", action="store_true", help="send without pacing")
    p.set_defaults(func=cmd_emulate)

    p = sub.add_parser("serve", parents=[common], help="run the pose server")
    p.add_argument("--bind", type=_address, default=("0.0.0.0", 9870))
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--passes", type=int, default=150, help="MC dropout passes")
    p.add_argument("--duration", type=float, default=None, help="stop after seconds")
    p.add_argument("--replay", type=Path, default=None,
                   help="process a capture file instead of a socket")
    p.add_argument("--out", type=Path, default=None, help="pose JSON-lines path")
    p.add_argument("--l-u", type=float, default=0.30)
    p.add_argument("--l-l", type=float, default=0.25)
    p.add_argument("--cal-window", type=float, default=3.0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.add_argument("--mode-ratio", type=float, default=4.0)
    p.add_argument("--mode-distance", type=float, default=0.10)
    p.add_argument("--include-samples", action="store_true")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("infer", parents=[common],
                       help="offline MC inference over a recorded session")
    p.add_argument("--data", type=Path, required=True, help="session directory")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--passes", type=int, default=150)
    p.add_argument("--out", type=Path, default=None, help="pose JSON-lines path")
    p.add_argument("--l-u", type=float, default=None,
                   help="upper arm length (default: session emu.json)")
    p.add_argument("--l-l", type=float, default=None)
    p.add_argument("--cal-window", type=float, default=3.0)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    p.set_defaults(func=cmd_infer)

    parser._armpose_subparsers = list(sub.choices.values())
    return parser


def _session_dirs(root):
    root = Path(root)
    if (root / "sensor.csv").exists():
        return [root]
    subdirs = sorted(d for d in root.glob("session_*") if (d / "sensor.csv").exists())
    if not subdirs:
        raise ArmPoseError(f"no sensor.csv under {root}")
    return subdirs


def _load_sessions(root):
    return [
        (read_sensor_csv(d / "sensor.csv"), read_truth_csv(d / "truth.csv"))
        for d in _session_dirs(root)
    ]


def _emu_config(args, session_index=0):
    seed = args.seed if args.sessions == 1 else args.seed * 1000 + session_index
    return EmuConfig(
        duration_s=args.duration,
        sensor_rate_hz=args.sensor_rate,
        truth_rate_hz=args.truth_rate,
        cal_window_s=args.cal_window,
        seed=seed,
        pressure_offset_hpa=args.pressure_offset,
        l_u=args.l_u,
        l_l=args.l_l,
    )


def cmd_synth(args):
    out = Path(args.out)
    for s in range(args.sessions):
        target = out if args.sessions == 1 else out / f"session_{s:02d}"
        target.mkdir(parents=True, exist_ok=True)
        cfg = _emu_config(args, s)
        sensors, truths = synth_session(cfg)
        pairs = merge_nearest(sensors, truths, tol_ms=args.tolerance)
        write_sensor_csv(target / "sensor.csv", sensors)
        write_truth_csv(target / "truth.csv", truths)
        write_paired_csv(target / "paired.csv", pairs)
        (target / "emu.json").write_text(cfg.to_json() + "\n")
        print(
            f"{target}: {len(sensors)} sensor frames, {len(truths)} truth frames, "
            f"{len(pairs)} paired ({len(sensors) - len(pairs)} dropped)"
        )
    return 0


def cmd_calibrate(args):
    frames = read_sensor_csv(Path(args.data) / "sensor.csv")
    state = calibrate_from_frames(frames, window_s=args.window)
    Path(args.out).write_text(json.dumps(state.to_dict()) + "\n")
    print(f"{args.out}: rho_c={state.rho_c:.3f} hPa, captured_at={state.captured_at:.0f} ms")
    return 0


def _hyper(args):
    return Hyper(epochs=args.epochs, lr=args.lr, batch=args.batch,
                 patience=args.patience, seed=args.seed, dtype=args.dtype)


def cmd_train(args):
    data = assemble_sessions(_load_sessions(args.data), cal_window_s=args.cal_window)
    spec = ModelSpec(arch=_ARCH_NAMES[args.arch], codec=args.codec,
                     width=args.width, dropout=args.dropout)
    targets = data.targets(args.codec)
    if spec.arch == "recurrent":
        from .evaluation import windows_for_indices

        X, rows = windows_for_indices(data, np.arange(len(data)))
        Y = targets[rows]
    else:
        X, Y = data.features, targets
    n_val = max(1, int(round(len(X) * args.val_fraction)))
    cut = max(1, len(X) - n_val)
    model, history = train(spec, (X[:cut], Y[:cut]), (X[cut:], Y[cut:]), _hyper(args))
    save_model(args.out, model)
    if args.history is not None:
        write_history_csv(args.history, history)
    print(
        f"{args.out}: arch={spec.arch} codec={spec.codec} "
        f"epochs={model.meta.epochs_run} best_val_mae={model.meta.best_val_loss:.6f}"
    )
    return 0


def cmd_eval(args):
    data = assemble_sessions(_load_sessions(args.data), cal_window_s=args.cal_window)
    model = load_model(args.model)
    summaries = evaluate_model(model, data)
    doc = {k: v.to_dict() for k, v in summaries.items()}
    text = json.dumps(doc, indent=2)
    if args.out is not None:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_bench(args):
    if args.data is not None:
        data = assemble_sessions(_load_sessions(args.data), cal_window_s=args.cal_window)
    else:
        data = synth_benchmark_dataset(args.samples, seed=args.seed,
                                       sessions=args.sessions,
                                       cal_window_s=args.cal_window)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    progress = (lambda msg: print(f"  {msg}", file=sys.stderr)) if args.verbose else None
    result = bench_matrix(
        data, cells=args.cells, k=args.k, hyper=_hyper(args), seed=args.seed,
        out_dir=str(out), width=args.width, dropout=args.dropout,
        fold_limit=args.fold_limit, progress=progress,
    )
    result.to_csv(out / "results.csv")
    result.to_json(out / "results.json")
    for cell in result.cells:
        if cell.error is not None:
            print(f"{cell.arch}/{cell.codec}: FAILED ({cell.error})")
        else:
            print(
                f"{cell.arch}/{cell.codec}: combined mean "
                f"{cell.combined.mean * 100:.2f} cm, median {cell.combined.median * 100:.2f} cm"
            )
    return 0


def cmd_emulate(args):
    cfg = EmuConfig(duration_s=args.duration, sensor_rate_hz=args.rate,
                    cal_window_s=args.cal_window, seed=args.seed)
    if args.capture is not None:
        packets = capture_packets(cfg)
        write_capture(args.capture, packets)
        print(f"{args.capture}: {len(packets)} packets")
    if args.target is not None:
        report = emulator_run(cfg, tuple(args.target), pace=not args.no_pace)
        print(
            f"sent {report.packets_sent} packets to {report.target[0]}:{report.target[1]} "
            f"in {report.duration_s:.2f}s, jitter p99 {report.jitter_p99_ms:.2f} ms"
        )
    elif args.capture is None:
        raise ArmPoseError("emulate needs --target and/or --capture")
    return 0


def _serve_config(args):
    return ServeConfig(
        n_passes=args.passes,
        master_seed=args.seed,
        cal_window_s=args.cal_window,
        l_u=args.l_u,
        l_l=args.l_l,
        mode_config=ModeConfig(wcss_ratio=args.mode_ratio,
                               min_distance_m=args.mode_distance),
        dtype=args.dtype,
        include_samples=args.include_samples,
    )


def cmd_serve(args):
    model = load_model(args.model)
    config = _serve_config(args)
    sink = open(args.out, "w") if args.out is not None else sys.stdout
    try:
        if args.replay is not None:
            report = serve_run(None, model, config, out=sink,
                               replay=read_capture(args.replay))
        else:
            print(f"serving on {args.bind[0]}:{args.bind[1]}", file=sys.stderr)
            report = serve_run(tuple(args.bind), model, config,
                               duration_s=args.duration, out=sink)
    finally:
        if args.out is not None:
            sink.close()
    print(
        f"frames={report.frames_in} inferences={report.inferences} "
        f"drops={report.queue_drops} malformed={report.malformed} "
        f"out_of_order={report.out_of_order} "
        f"latency_p99={report.latency_p99_ms:.2f} ms "
        f"rate={report.sustained_rate_hz():.1f}/s",
        file=sys.stderr,
    )
    return 0


def cmd_infer(args):
    from .wire import packetize

    model = load_model(args.model)
    session = Path(args.data)
    frames = read_sensor_csv(session / "sensor.csv")
    l_u, l_l = args.l_u, args.l_l
    emu_path = session / "emu.json"
    if (l_u is None or l_l is None) and emu_path.exists():
        cfg = EmuConfig.from_json(emu_path.read_text())
        l_u = cfg.l_u if l_u is None else l_u
        l_l = cfg.l_l if l_l is None else l_l
    config = ServeConfig(
        n_passes=args.passes, master_seed=args.seed, cal_window_s=args.cal_window,
        l_u=l_u if l_u is not None else 0.30,
        l_l=l_l if l_l is not None else 0.25,
        dtype=args.dtype,
    )
    sink = open(args.out, "w") if args.out is not None else sys.stdout
    try:
        report = serve_run(None, model, config, out=sink, replay=packetize(frames))
    finally:
        if args.out is not None:
            sink.close()
    print(f"emitted {report.inferences} poses from {report.frames_in} frames",
          file=sys.stderr)
    return 0


def _apply_config_file(parser, argv):
    if "--config" not in argv:
        return
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return  # argparse will report the usage error
    path = Path(argv[idx + 1])
    try:
        overrides = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArmPoseError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ArmPoseError(f"config {path} must hold a JSON object")
    # subparser argument defaults shadow the root parser's, so apply to each
    for sp in parser._armpose_subparsers:
        sp.set_defaults(**overrides)
    parser.set_defaults(**overrides)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except ArmPoseError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "OSError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

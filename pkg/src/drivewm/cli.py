"""Command-line entry point: ``drivewm <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 parse/IO error, 3 violated metric or
sampler precondition (e.g. a set smaller than k+1).  Failures also print one
machine-readable line to stderr::

    drivewm-error: {"exit_code": 3, "error": "SetTooSmall", "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .errors import DriveWMError, InputError
from .harness import (
    DEFAULT_EVAL_RATE,
    DEFAULT_K,
    DEFAULT_WINDOW_SECONDS,
    WindowSpec,
    evaluate_windows,
    prepare_set,
    to_planar,
    trajectory_report,
    trajectory_window_score,
    windows,
)
from .io import (
    FrameRecord,
    file_digest,
    load_trajectory,
    read_rollout_dump,
    save_trajectories,
    trajectory_files,
    write_rollout_dump,
)
from .losses import DEFAULT_KD_LAMBDA, DEFAULT_KD_T, DEFAULT_KD_T_TARGET
from .metrics import Metric
from .quantizer import token_copy_rate
from .rollout import (
    DEFAULT_CONTEXT_FRAMES,
    DEFAULT_CONTEXT_RATE,
    DEFAULT_FM_STEPS,
    DEFAULT_MGM_STEPS,
    ConstantTokens,
    ConstantVelocity,
    ContextWindow,
    CopyTokens,
    CopyVelocity,
    OracleTokens,
    OracleVelocity,
    StampTokens,
    StampVelocity,
    fm_sampler,
    mgm_sampler,
    rollout,
)
from .synth import PRESETS, DEFAULT_SPREAD, gen_sequences
from .trajectory import DEFAULT_TURN_THRESHOLD, is_turn_event, resample, yaw_rate

log = logging.getLogger("drivewm")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PRECONDITION = 0, 1, 2, 3


@dataclass(frozen=True)
class RunConfig:
    """Every default the CLI uses, with where it comes from."""

    k: int = DEFAULT_K
    turn_threshold: float = DEFAULT_TURN_THRESHOLD
    window_seconds: float = DEFAULT_WINDOW_SECONDS
    eval_rate: float = DEFAULT_EVAL_RATE
    fm_steps: int = DEFAULT_FM_STEPS
    mgm_steps: int = DEFAULT_MGM_STEPS
    context_frames: int = DEFAULT_CONTEXT_FRAMES
    context_rate: float = DEFAULT_CONTEXT_RATE
    kd_temperature: float = DEFAULT_KD_T
    kd_target_temperature: float = DEFAULT_KD_T_TARGET
    kd_lambda: float = DEFAULT_KD_LAMBDA


# "reference" values are the published model settings; "choice" values are local defaults
_PROVENANCE = {
    "k": "choice",
    "turn_threshold": "reference",
    "window_seconds": "reference",
    "eval_rate": "reference",
    "fm_steps": "reference",
    "mgm_steps": "choice",
    "context_frames": "reference",
    "context_rate": "reference",
    "kd_temperature": "reference",
    "kd_target_temperature": "reference",
    "kd_lambda": "reference",
}


def _defaults_epilog() -> str:
    lines = ["defaults ([reference] = published setting, [choice] = local default):"]
    for name, value in asdict(RunConfig()).items():
        lines.append(f"  {name:<22} {value!s:<8} [{_PROVENANCE[name]}]")
    lines.append("  kd loss: T=2, T'=0.2, lambda=0.5")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        _emit_error(EXIT_USAGE, "UsageError", message)
        sys.exit(EXIT_USAGE)


def _emit_error(code: int, kind: str, message: str) -> None:
    line = json.dumps({"exit_code": code, "error": kind, "message": message})
    print(f"drivewm-error: {line}", file=sys.stderr)


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _load_dir(path: str, rate: float | None) -> tuple[list, list[dict[str, str]]]:
    files = trajectory_files(path)
    if not files:
        log.warning("no trajectory files found in %s", path)
    seqs, digests = [], []
    for f in files:
        seq = load_trajectory(f)
        if rate is not None:
            seq = resample(seq, rate)
        seqs.append(seq)
        digests.append({"file": f.name, "sha256": file_digest(f)})
    return seqs, digests


# -- subcommands --------------------------------------------------------------------

def cmd_traj_metrics(args) -> int:
    metrics = ["frechet", "ade"] if args.metric == "both" else [args.metric]
    real, real_digests = _load_dir(args.real, args.rate)
    gen, gen_digests = _load_dir(args.gen, args.rate)
    config: dict[str, Any] = {
        "command": "traj-metrics",
        "real": args.real,
        "gen": args.gen,
        "metric": args.metric,
        "eval_rate": args.rate,
        "run_config": asdict(RunConfig(k=args.k)),
    }
    provenance: dict[str, Any] = {"inputs": {"real": real_digests, "generated": gen_digests}}
    if not args.deterministic:
        provenance["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    provenance["tool_version"] = __version__

    report = trajectory_report(
        real, gen, args.k, metrics,
        canonicalize_paths=not args.no_canonicalize,
        paired_ade=args.paired_ade,
        config=config,
        provenance=provenance,
    )
    if args.window_mode:
        rate = args.rate or real[0].sample_rate
        spec = WindowSpec(args.window_mode, args.window, rate, args.horizon)
        primary = metrics[0]
        # whole trajectories are canonicalized once; a window of a stopped
        # vehicle has no heading of its own
        r = prepare_set(real, "real", canonicalize_paths=not args.no_canonicalize)
        g = prepare_set(gen, "generated", canonicalize_paths=not args.no_canonicalize)
        score = trajectory_window_score(primary, args.k, args.window_score)
        report.windows = evaluate_windows(score, list(r), list(g), spec)
        report.config.update({
            "window_mode": spec.mode.value,
            "window_seconds": spec.window_seconds,
            "window_rate": spec.rate,
            "horizon_seconds": spec.horizon_seconds,
            "window_metric": primary,
            "window_score": args.window_score,
            "window_overlap": "none",
        })
    _write_text(args.out, report.to_json())
    if args.csv:
        _write_text(args.csv, report.windows_csv())
    if args.out not in (None, "-"):
        sys.stdout.write(report.format_table())
    return EXIT_OK


def cmd_turn_filter(args) -> int:
    files = trajectory_files(args.input)
    if not files:
        log.warning("no trajectory files found in %s", args.input)
    lines = []
    for i, f in enumerate(files):
        seq = load_trajectory(f)
        if is_turn_event(seq, args.threshold):
            lines.append(f"{i}\t{f.name}\t{float(yaw_rate(seq, 0))!r}")
    _write_text(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_windows(args) -> int:
    spec = WindowSpec(args.mode, args.window, args.rate, args.horizon)
    rows = ["index\tstart_s\tend_s\tstart_frame\tend_frame\tframes"]
    for i, (s, e) in enumerate(windows(spec)):
        rows.append(f"{i}\t{s / spec.rate:g}\t{e / spec.rate:g}\t{s}\t{e}\t{e - s}")
    sys.stdout.write("\n".join(rows) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    preset = PRESETS[args.preset]
    spread = dict(DEFAULT_SPREAD)
    if args.spread_speed is not None:
        spread["speed"] = args.spread_speed
    if args.spread_yaw_rate is not None:
        spread["yaw_rate"] = args.spread_yaw_rate
    rng = np.random.default_rng(args.seed)
    seqs = gen_sequences(preset, args.n, args.duration, args.rate, rng, spread)
    paths = save_trajectories(seqs, args.out, args.flavor)
    print(f"wrote {len(paths)} trajectories to {args.out}")
    return EXIT_OK


def _make_context(paradigm: str, predictor: str, rng, n: int, shape, vocab: int) -> ContextWindow:
    if paradigm == "fm":
        if predictor == "stamp":
            frames = [np.full(shape, float(i - n + 1)) for i in range(n)]
        else:
            frames = [rng.standard_normal(shape) for _ in range(n)]
    else:
        if predictor == "stamp":
            frames = [np.full(shape[:2], (i - n + 1) % vocab, dtype=np.int64) for i in range(n)]
        else:
            frames = [rng.integers(0, vocab, size=shape[:2]) for _ in range(n)]
    return ContextWindow(n, frames, DEFAULT_CONTEXT_RATE)


def cmd_rollout_sim(args) -> int:
    rng = np.random.default_rng(args.seed)
    shape = (args.height, args.width, args.channels)
    ctx = _make_context(args.paradigm, args.predictor, rng, args.context, shape, args.vocab)
    if args.paradigm == "fm":
        steps = args.steps or DEFAULT_FM_STEPS
        target = rng.standard_normal(shape)
        pred = {
            "oracle": lambda: OracleVelocity(target),
            "constant": lambda: ConstantVelocity(0.0),
            "copy": CopyVelocity,
            "stamp": StampVelocity,
        }[args.predictor]()
        sampler = fm_sampler(pred, rng, steps)
        kind = "latent"
    else:
        steps = args.steps or DEFAULT_MGM_STEPS
        target = rng.integers(0, args.vocab, size=shape[:2])
        pred = {
            "oracle": lambda: OracleTokens(target, args.vocab),
            "constant": lambda: ConstantTokens(0, args.vocab),
            "copy": lambda: CopyTokens(args.vocab),
            "stamp": lambda: StampTokens(args.vocab),
        }[args.predictor]()
        sampler = mgm_sampler(pred, rng, args.vocab, steps, args.temperature)
        kind = "tokens"

    initial = ctx.frames
    result = rollout(sampler, ctx, args.frames)
    records = [FrameRecord("context", i, kind, f) for i, f in enumerate(initial)]
    records += [FrameRecord("generated", i, kind, f) for i, f in enumerate(result.frames)]
    if args.out:
        write_rollout_dump(args.out, records)

    diag: dict[str, Any] = {
        "paradigm": args.paradigm,
        "predictor": args.predictor,
        "frames": args.frames,
        "steps": steps,
        "seed": args.seed,
        "context_frames": args.context,
    }
    if args.paradigm == "mgm":
        rates = _copy_rates(initial[-1], result.frames)
        diag["temperature"] = args.temperature
        diag["copy_rate"] = float(np.mean(rates))
        diag["copy_rate_per_frame"] = rates
    elif args.predictor == "oracle":
        diag["max_abs_error_to_target"] = float(max(np.max(np.abs(f - target)) for f in result.frames))
    sys.stdout.write(json.dumps(diag, indent=2) + "\n")
    return EXIT_OK


def _copy_rates(last_context: np.ndarray, generated: Sequence[np.ndarray]) -> list[float]:
    rates, prev = [], last_context
    for g in generated:
        rates.append(token_copy_rate(prev, g))
        prev = g
    return rates


def cmd_diagnose_copy_rate(args) -> int:
    ctx = [r for r in read_rollout_dump(args.context) if r.role == "context"] or read_rollout_dump(args.context)
    gen_all = read_rollout_dump(args.generated)
    gen = [r for r in gen_all if r.role == "generated"] or gen_all
    if not ctx or not gen:
        raise InputError("copy-rate diagnosis needs at least one context and one generated frame")
    for r in ctx[-1:] + gen:
        if r.kind != "tokens":
            raise InputError("copy rate is defined for token grids only")
    rates = _copy_rates(ctx[-1].data, [r.data for r in gen])
    out = {"copy_rate": float(np.mean(rates)), "copy_rate_per_frame": rates, "frames": len(rates)}
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(
        prog="drivewm",
        description="Rollout samplers, quantization diagnostics and trajectory evaluation "
                    "for latent driving world models.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    t = sub.add_parser("traj-metrics", formatter_class=fmt,
                       help="k-NN precision/recall of generated vs real trajectories")
    t.add_argument("--real", required=True, help="directory (or file) of real trajectories")
    t.add_argument("--gen", required=True, help="directory (or file) of generated trajectories")
    t.add_argument("--metric", choices=["ade", "frechet", "both"], default="both")
    t.add_argument("--k", type=int, default=DEFAULT_K, help="nearest-neighbour rank for radii [choice]")
    t.add_argument("--no-canonicalize", action="store_true",
                   help="skip moving each trajectory to the origin heading +x")
    t.add_argument("--paired-ade", action="store_true",
                   help="also report mean ADE of index-paired real/generated trajectories")
    t.add_argument("--rate", type=float, default=None,
                   help="resample every trajectory to this rate first (e.g. 5 Hz evaluation)")
    t.add_argument("--window-mode", choices=["chunked", "cumulative"], default=None,
                   help="also score windows of the trajectories")
    t.add_argument("--window", type=float, default=DEFAULT_WINDOW_SECONDS, help="window seconds [reference]")
    t.add_argument("--horizon", type=float, default=8.0, help="evaluation horizon in seconds")
    t.add_argument("--window-score", choices=["precision", "recall"], default="precision")
    t.add_argument("--csv", default=None, help="write per-window scores as CSV")
    t.add_argument("--out", default=None, help="report path (JSON); stdout if omitted")
    t.add_argument("--deterministic", action="store_true", help="omit the timestamp from the report")
    t.set_defaults(func=cmd_traj_metrics)

    f = sub.add_parser("turn-filter", formatter_class=fmt,
                       help="list trajectories whose initial yaw rate marks a turn")
    f.add_argument("--in", dest="input", required=True, help="directory (or file) of trajectories")
    f.add_argument("--threshold", type=float, default=DEFAULT_TURN_THRESHOLD,
                   help="rad/s, inclusive [reference]")
    f.add_argument("--out", default=None, help="output list (index, file, yaw rate); stdout if omitted")
    f.set_defaults(func=cmd_turn_filter)

    w = sub.add_parser("windows", formatter_class=fmt, help="print the evaluation window table")
    w.add_argument("--mode", choices=["chunked", "cumulative"], default="chunked")
    w.add_argument("--window", type=float, default=DEFAULT_WINDOW_SECONDS, help="seconds [reference]")
    w.add_argument("--rate", type=float, default=DEFAULT_EVAL_RATE, help="Hz [reference]")
    w.add_argument("--horizon", type=float, default=20.0, help="seconds")
    w.set_defaults(func=cmd_windows)

    s = sub.add_parser("synth", formatter_class=fmt, help="write synthetic trajectory files")
    s.add_argument("--preset", choices=sorted(PRESETS), required=True)
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=10.0, help="seconds")
    s.add_argument("--rate", type=float, default=10.0, help="Hz")
    s.add_argument("--spread-speed", type=float, default=None,
                   help=f"half-width of per-trajectory speed jitter (default {DEFAULT_SPREAD['speed']})")
    s.add_argument("--spread-yaw-rate", type=float, default=None,
                   help=f"half-width of per-trajectory yaw-rate jitter (default {DEFAULT_SPREAD['yaw_rate']})")
    s.add_argument("--flavor", choices=["matrix", "quat"], default="matrix")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("rollout-sim", formatter_class=fmt,
                       help="run a sliding-window rollout with an analytic predictor")
    r.add_argument("--paradigm", choices=["fm", "mgm"], required=True)
    r.add_argument("--predictor", choices=["oracle", "constant", "copy", "stamp"], required=True)
    r.add_argument("--frames", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--steps", type=int, default=None,
                   help=f"sampling steps (fm: {DEFAULT_FM_STEPS} [reference], mgm: {DEFAULT_MGM_STEPS} [choice])")
    r.add_argument("--context", type=int, default=DEFAULT_CONTEXT_FRAMES, help="context frames [reference]")
    r.add_argument("--height", type=int, default=4)
    r.add_argument("--width", type=int, default=4)
    r.add_argument("--channels", type=int, default=8, help="latent channels (fm)")
    r.add_argument("--vocab", type=int, default=16, help="codebook size K (mgm)")
    r.add_argument("--temperature", type=float, default=1.0, help="mgm sampling temperature [choice]")
    r.add_argument("--out", default=None, help="rollout dump (JSON lines)")
    r.set_defaults(func=cmd_rollout_sim)

    d = sub.add_parser("diagnose-copy-rate", formatter_class=fmt,
                       help="fraction of generated tokens equal to the previous frame")
    d.add_argument("--context", required=True, help="rollout dump holding the context frames")
    d.add_argument("--generated", required=True, help="rollout dump holding generated frames")
    d.set_defaults(func=cmd_diagnose_copy_rate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as exc:
        _emit_error(EXIT_IO, type(exc).__name__, str(exc))
        return EXIT_IO
    except (OSError, json.JSONDecodeError) as exc:
        _emit_error(EXIT_IO, type(exc).__name__, str(exc))
        return EXIT_IO
    except DriveWMError as exc:
        _emit_error(EXIT_PRECONDITION, type(exc).__name__, str(exc))
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: run, eval, synth.

Exit codes: 0 ok, 2 input or configuration error, 3 evaluation error.
DYNAVO_THREADS caps the BLAS/OpenMP thread pools; it must be read before
numpy is first imported, hence the early environment handling below.
"""
from __future__ import annotations

import os
import sys

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def thread_cap(env=os.environ) -> int | None:
    raw = env.get("DYNAVO_THREADS")
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"DYNAVO_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"DYNAVO_THREADS must be a positive integer, got {raw!r}")
    return n


try:
    _CAP = thread_cap()
except ValueError:
    _CAP = None     # reported by main()
if _CAP is not None:
    for _var in THREAD_VARS:
        os.environ[_var] = str(_CAP)

import argparse  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

from .config import ConfigError, load_config  # noqa: E402
from .dataset_io import DatasetError, read_trajectory  # noqa: E402
from .evaluation import EvaluationError, evaluate_files  # noqa: E402

EXIT_OK, EXIT_INPUT, EXIT_EVAL = 0, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("dynavo")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", choices=sorted(LOG_LEVELS), default=argparse.SUPPRESS,
                        help="logging verbosity (default warn)")

    p = argparse.ArgumentParser(prog="dynavo", parents=[common],
                                description="Scene-gated RGB-D odometry with direct pose refinement.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run the pipeline on a TUM-layout sequence")
    r.add_argument("--seq", required=True, help="sequence directory (rgb.txt, depth.txt, ...)")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--config", help="key = value config file")
    r.add_argument("--detections", help="detections.jsonl overriding <seq>/detections.jsonl")
    r.add_argument("--external-poses", help="TUM trajectory used as the feature pose source")
    r.add_argument("--max-frames", type=int, help="process only the first N frames")

    e = sub.add_parser("eval", parents=[common], help="ATE/RPE of an estimate against ground truth")
    e.add_argument("est", help="estimated trajectory (TUM format)")
    e.add_argument("gt", help="ground-truth trajectory (TUM format)")
    e.add_argument("--out", required=True, help="output directory for metrics.csv and trajectory.svg")
    e.add_argument("--name", default=None, help="sequence name in the report (default: est file stem)")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic sequence in TUM layout")
    s.add_argument("scenario", help="static | dynamic_object | wander | ceiling_sweep | fast_roll | mixed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--frames", type=int, default=None, help="number of frames (scenario default)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=1, choices=(1, 2, 4, 8), help="image downscale factor")
    return p


def _cmd_run(args) -> int:
    from .pipeline import run_sequence

    cfg = load_config(args.config)
    if args.max_frames is not None and args.max_frames < 1:
        raise ConfigError("--max-frames must be >= 1")
    res = run_sequence(args.seq, cfg, args.out, args.detections, args.external_poses, args.max_frames)
    s = res.summary
    print(f"{s['frames']} frames: {s['GOOD']} GOOD, {s['BAD']} BAD, {s['Fused']} fused, "
          f"{s['FeatureFallback']} feature fallback -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    try:
        row = evaluate_files(est, gt, args.out, args.name or Path(args.est).stem)
    except EvaluationError as exc:
        print(f"dynavo eval: {exc}", file=sys.stderr)
        return EXIT_EVAL
    print(f"ATE rmse {row['ate_rmse']:.4f} m, T.RPE rmse {row['t_rpe_rmse']:.4f} m, "
          f"R.RPE rmse {row['rot_rpe_rmse']:.3f} deg -> {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    from .synth import SCENARIOS, default_intrinsics, export_tum, make_scenario

    valid = SCENARIOS + ("mixed",)
    if args.scenario not in valid:
        raise ConfigError(f"unknown scenario {args.scenario!r}; valid: {', '.join(valid)}")
    if args.frames is not None and args.frames < 2:
        raise ConfigError("--frames must be >= 2")
    scene = make_scenario(args.scenario, args.frames, args.seed, default_intrinsics(args.scale))
    out = export_tum(scene, args.out)
    print(f"wrote {len(scene)} frames of {args.scenario!r} to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[getattr(args, "log_level", "warn")],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        thread_cap()
        return {"run": _cmd_run, "eval": _cmd_eval, "synth": _cmd_synth}[args.command](args)
    except (ConfigError, DatasetError, ValueError, OSError) as exc:
        print(f"dynavo {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

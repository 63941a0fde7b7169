"""Command-line entry points: run, replay, hardy."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import _fft
from .experiment import ConfigError, ExperimentConfig, parse_space, replay, run
from .spaces import estimate_hardy_constant, write_hardy_csv
from .spectral import CheckpointError, GridSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nslab",
        description="Periodic-box laboratory for perturbed viscous flow.",
    )
    parser.add_argument(
        "--threads", type=int, default=None, metavar="N",
        help="transform worker threads (default 1)",
    )
    parser.add_argument(
        "--serial", action="store_true",
        help="force single-threaded transforms for bitwise determinism",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a configured experiment")
    p_run.add_argument("config", help="path to a key = value config file")

    p_replay = sub.add_parser("replay", help="resume from a checkpoint state")
    p_replay.add_argument("checkpoint", help="path to a checkpoints/state_*.npz")
    p_replay.add_argument(
        "--extra-time", type=float, default=0.0, metavar="T",
        help="additional time to march past the checkpoint (default 0)",
    )

    p_hardy = sub.add_parser("hardy", help="estimate a Hardy constant")
    p_hardy.add_argument("space", help="space tag, e.g. WeightedLinfty or Morrey3p:2.5")
    p_hardy.add_argument("--trials", type=int, default=50, metavar="K")
    p_hardy.add_argument("--seed", type=int, default=0, metavar="S")
    p_hardy.add_argument(
        "--points", type=int, default=32, metavar="N",
        help="grid points per axis (default 32)",
    )
    p_hardy.add_argument(
        "--box", type=float, default=2.0 * np.pi, metavar="L",
        help="box side length (default 2*pi)",
    )
    p_hardy.add_argument(
        "--output", default=None, metavar="CSV",
        help="also write the per-trial table to this path",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.serial:
        _fft.set_workers(1)
    elif args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        _fft.set_workers(args.threads)

    try:
        if args.command == "run":
            return run(ExperimentConfig.from_file(args.config))
        if args.command == "replay":
            return replay(args.checkpoint, args.extra_time)
        space = parse_space(args.space)
        grid = GridSpec(box_length=args.box, points_per_axis=args.points)
        estimate = estimate_hardy_constant(space, grid, args.trials, args.seed)
        if args.output:
            write_hardy_csv(estimate, args.output)
        print(
            f"space = {space.label()}  trials = {estimate.trials}  "
            f"K_hat = {estimate.K_hat!r}  redraws = {estimate.redraws}"
        )
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

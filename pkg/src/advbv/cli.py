"""Command line surface: sweep, plot, selftest, presets."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .harness import (
    ConfigError,
    load_config,
    parse_csv,
    preset_configs,
    run_sweep,
)
from .svg import render_curves
from .training import interpolation_threshold


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advbv",
        description="Bias-variance sweeps for adversarially trained models "
                    "on synthetic data.",
    )
    parser.add_argument("--version", action="version", version=f"advbv {__version__}")
    sub = parser.add_subparsers(dest="command")

    p_sweep = sub.add_parser("sweep", help="run a sweep from a JSON config")
    p_sweep.add_argument("--config", required=True, help="path to the sweep config")
    p_sweep.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sweep.add_argument("--threads", type=int, default=None,
                         help="worker processes (default: config, ADVBV_THREADS, or cores)")
    p_sweep.add_argument("--out", default=None, help="override the output directory")

    p_plot = sub.add_parser("plot", help="plot a sweep CSV as SVG")
    p_plot.add_argument("--in", dest="csv_in", required=True, help="sweep CSV path")
    p_plot.add_argument("--out", dest="svg_out", required=True, help="output SVG path")

    sub.add_parser("selftest", help="run the fast invariant suite")

    p_presets = sub.add_parser("presets", help="print the named sweep configurations")
    p_presets.add_argument("--name", default=None, help="print just one preset")
    return parser


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    result = run_sweep(
        cfg,
        out_dir=args.out,
        seed_override=args.seed,
        threads=args.threads,
        quiet=False,
    )
    failed = [p.sweep_param for p in result.points if p.failed]
    print(f"sweep '{cfg['name']}' finished: {len(result.points)} points, "
          f"threshold={result.threshold}")
    if failed:
        print(f"warning: {len(failed)} grid point(s) failed: {failed}", file=sys.stderr)
        return 1
    return 0


def _cmd_plot(args) -> int:
    data = parse_csv(args.csv_in)
    ok = np.isfinite(data["risk"])
    x = data["sweep_param"][ok]
    curve = list(zip(data["sweep_param"].tolist(), data["robust_train_error"].tolist()))
    curve = [(p, e) for p, e in curve if np.isfinite(e)]
    threshold = interpolation_threshold(curve) if curve else None
    render_curves(
        args.svg_out,
        x,
        {
            "bias": data["bias"][ok],
            "variance": data["variance"][ok],
            "risk": data["risk"][ok],
        },
        threshold=threshold,
        xlabel="sweep parameter",
        ylabel="loss decomposition",
        title=str(args.csv_in),
    )
    print(f"wrote {args.svg_out}")
    return 0


def _cmd_presets(args) -> int:
    presets = preset_configs()
    if args.name is not None:
        if args.name not in presets:
            print(f"unknown preset {args.name!r}; known: {', '.join(sorted(presets))}",
                  file=sys.stderr)
            return 2
        print(json.dumps(presets[args.name], indent=2, sort_keys=True))
        return 0
    print(json.dumps(presets, indent=2, sort_keys=True))
    return 0


def _cmd_selftest(_args) -> int:
    from .selftest import run_selftest

    failures = run_selftest()
    if failures:
        print(f"{failures} check(s) failed", file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "presets":
            return _cmd_presets(args)
        if args.command == "selftest":
            return _cmd_selftest(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.print_usage(sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())

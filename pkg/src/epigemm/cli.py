"""``bench`` command line: kernel breakdowns, testsuite sweeps and calibration."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (ALL_VARIANTS, calibrate_cost_model, emit_report, parse_precision, parse_variants,
                    run_kernel_bench, run_testsuite)
from .costmodel import REFERENCE_TARGETS, Targets
from .errors import CalibrationError, ContractViolation
from .mesh import DEFAULT_CONFIG_PATH, format_config, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    parser.add_argument("--config", type=Path, default=None,
                        help=f"mesh/cost parameter file (default: {DEFAULT_CONFIG_PATH.name} shipped with the package)")
    sub = parser.add_subparsers(dest="command", required=True)

    fmt = dict(choices=("text", "csv", "json"), default="text")
    mode = dict(choices=("inproc", "service"))

    k = sub.add_parser("kernel", help="time breakdown of one m x n x K micro-kernel call")
    k.add_argument("--k", type=int, default=4096)
    k.add_argument("--mode", default="inproc", **mode)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--format", **fmt)

    t = sub.add_parser("testsuite", help="full gemm over transpose variants with residue checks")
    t.add_argument("--m", type=int, default=768)
    t.add_argument("--n", type=int, default=768)
    t.add_argument("--k", type=int, default=768)
    t.add_argument("--size", type=int, default=None, help="set m, n and k at once (4096 for full scale)")
    t.add_argument("--precision", default="single", type=parse_precision, help="single or false-double")
    t.add_argument("--variants", default="all", type=parse_variants,
                   help=f"'all' or a comma list from {','.join(ALL_VARIANTS)}")
    t.add_argument("--mode", default="service", **mode)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threshold", type=float, default=None)
    t.add_argument("--format", **fmt)

    c = sub.add_parser("calibrate", help="fit cost parameters to measured timings and write a config file")
    c.add_argument("--targets", type=Path, default=None,
                   help="key=value file with input_time, device_time, post_time, total_time "
                        "and optionally service_total_time (default: the built-in reference timings)")
    c.add_argument("--k", type=int, default=4096)
    c.add_argument("--out", type=Path, default=None, help="where to write (default: --config, else stdout)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "kernel":
            report = run_kernel_bench(args.k, args.mode, args.seed, args.config)
        elif args.command == "testsuite":
            m, n, k = (args.size,) * 3 if args.size else (args.m, args.n, args.k)
            report = run_testsuite(m, n, k, args.precision, args.variants, args.mode, args.seed,
                                   args.config, args.threshold)
        else:
            targets = Targets.parse(args.targets.read_text()) if args.targets else REFERENCE_TARGETS
            mesh_config = load_config(args.config)[0] if args.config else None
            out = args.out or args.config
            params = calibrate_cost_model(targets, args.k, mesh_config, out=out)
            if out is None:
                from .mesh import MeshConfig
                sys.stdout.write(format_config(mesh_config or MeshConfig(), params))
            else:
                print(f"wrote {out}")
            return 0
    except (ContractViolation, CalibrationError, OSError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(emit_report(report, args.format).decode())
    return 1 if report.failed else 0


if __name__ == "__main__":
    sys.exit(main())

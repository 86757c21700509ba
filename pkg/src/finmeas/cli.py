"""Command-line driver.

Subcommands: ``stability``, ``reconstruct``, ``scaling``, ``rkhs-demo``;
each takes ``--config <path>``, ``--out <dir>``, ``--seed <u64>`` (overrides
the config) and ``--threads <n>``.

Exit codes: 0 success, 2 config error, 3 numerical failure.

Thread caps are applied to the BLAS environment before numpy is imported,
so heavy imports happen inside :func:`main`.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finmeas",
        description="Inverse problems with finitely many measurements: "
        "stability sweeps, level selection, and lattice-initialized "
        "Landweber reconstruction on desk-scale PDE models.",
    )
    sub = parser.add_subparsers(dest="pipeline", required=True)
    for name, blurb in (
        ("stability", "tail-defect sweep, constants, level selection"),
        ("reconstruct", "global reconstruction with a synthetic truth"),
        ("scaling", "measurement level vs stability constant across box widths"),
        ("rkhs-demo", "pointwise-sampling projections on the circle"),
    ):
        p = sub.add_parser(name, help=blurb)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)

    from .errors import ConfigError, FinmeasError
    from .experiments import load_config, run_experiment

    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = int(args.seed)
        out_dir = args.out if args.out is not None else config["out_dir"]
        report = run_experiment(args.pipeline, config, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FinmeasError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(report.path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

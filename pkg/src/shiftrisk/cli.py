"""Command-line entry point.

Subcommands:
  analyze --config <path> [--out <dir>] [--seed <u64>] [--alpha-grid <csv>] [--threads <n>]
  synth   --instance <name> --n <count> --seed <u64> [--out <path>]
  oracle  --instance <name> --alpha <f> [--epsilon <f>]

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
Failures print exactly one structured line: error[<kind>]: <message>.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys

from .data import write_csv
from .errors import ConfigError, DataError, NumericError, ShiftRiskError
from .oracles import (
    BUNDLED_INSTANCES,
    ToySineConfig,
    bundled_instance,
    exact_dual_check,
    exact_noisy_worst_case,
    generate_toy_sine,
    sample_discrete_instance,
)
from .reporting import load_analysis_config, run_analysis

SYNTH_INSTANCES = sorted(BUNDLED_INSTANCES) + ["toy-sine"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shiftrisk", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="run a configured worst-case analysis end to end")
    analyze.add_argument("--config", required=True, help="path to the YAML analysis config")
    analyze.add_argument("--out", default=None, help="output directory (overrides the config)")
    analyze.add_argument("--seed", type=int, default=None, help="seed override")
    analyze.add_argument("--alpha-grid", default=None, help="comma-separated alpha grid override")
    analyze.add_argument("--threads", type=int, default=1, help="fold-level worker threads")

    synth = sub.add_parser("synth", help="emit a bundled synthetic dataset as CSV")
    synth.add_argument("--instance", required=True, choices=SYNTH_INSTANCES)
    synth.add_argument("--n", type=int, required=True, help="number of rows")
    synth.add_argument("--seed", type=int, required=True)
    synth.add_argument("--out", default=None, help="output CSV path (default: stdout)")

    oracle = sub.add_parser("oracle", help="print exact worst-case values for a bundled instance")
    oracle.add_argument("--instance", required=True, choices=sorted(BUNDLED_INSTANCES))
    oracle.add_argument("--alpha", type=float, required=True)
    oracle.add_argument("--epsilon", type=float, default=None, help="also print the noise-augmented value")
    return parser


def _cmd_analyze(args) -> int:
    grid = None
    if args.alpha_grid is not None:
        grid = [float(tok) for tok in args.alpha_grid.split(",") if tok.strip()]
    config = load_analysis_config(args.config, out=args.out, seed=args.seed, alpha_grid=grid)
    curve = run_analysis(config, threads=max(args.threads, 1))
    for est in curve.estimates:
        print(
            f"alpha={est.alpha:g} r_hat={est.r_hat:.6f} "
            f"ci=[{est.ci[0]:.6f}, {est.ci[1]:.6f}] subsample={est.subsample_size}"
        )
    print(f"wrote artifacts to {config.output_dir}")
    return 0


def _cmd_synth(args) -> int:
    if args.instance == "toy-sine":
        dataset = generate_toy_sine(ToySineConfig(n=args.n, seed=args.seed))
    else:
        dataset = sample_discrete_instance(bundled_instance(args.instance), args.n, args.seed)
    if args.out is not None:
        write_csv(dataset, args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(dataset.column_names)
        for r in range(dataset.n_rows):
            writer.writerow(
                [
                    repr(float(col[r])) if kind == "numeric" else str(int(col[r]))
                    for col, kind in zip(dataset.columns, dataset.kinds)
                ]
            )
        sys.stdout.write(buf.getvalue())
    return 0


def _cmd_oracle(args) -> int:
    instance = bundled_instance(args.instance)
    primal, dual = exact_dual_check(instance, args.alpha)
    print(f"instance={args.instance} alpha={args.alpha:g}")
    print(f"primal={primal!r}")
    print(f"dual={dual!r}")
    if args.epsilon is not None:
        noisy = exact_noisy_worst_case(instance, args.alpha, args.epsilon)
        print(f"noisy[epsilon={args.epsilon:g}]={noisy!r}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_oracle(args)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except (NumericError, FloatingPointError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return 4
    except ShiftRiskError as exc:
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

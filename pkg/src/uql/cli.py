"""Command line entry point: ``uql run|sweep|oracle|plot|selftest``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiment import (OUTPUT_ROOT_ENV, ConfigError, default_output_root, dump_oracle, load_config,
                         parse_scalar, run_experiment, sweep)
from .mdp import MapError
from .numerics import NumericsError
from .plots import KINDS, PlotError, policy_text, render_plots

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uql", description="Tabular unbiased soft Q-learning experiments.",
                     epilog=f"Relative output directories are placed under ${OUTPUT_ROOT_ENV} "
                            "(default: current directory).")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
        p.add_argument("--output-dir", type=Path, help="override the configured output directory")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")

    p = sub.add_parser("run", help="run every seed (and variant) of a config")
    p.add_argument("config")
    run_flags(p)

    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="dotted field, e.g. agent.kappa")
    p.add_argument("--values", required=True, help="comma separated; 'inf' is allowed")
    run_flags(p)

    p = sub.add_parser("oracle", help="dump Q*, V* and optimal action sets")
    p.add_argument("config")
    p.add_argument("--output-dir", type=Path)
    p.add_argument("--tol", type=float, default=1e-10)

    p = sub.add_parser("plot", help="render SVG figures from a results directory")
    p.add_argument("results", type=Path)
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--metric", help="plot this metric instead of the probe curves")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("selftest", help="run the randomized property checks")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args) -> int:
    if args.command == "selftest":
        from .selftest import run_selftest

        return EXIT_OK if run_selftest(args.seed) else EXIT_RUNTIME

    if args.command == "plot":
        print(render_plots(args.results, args.kind, args.out, args.metric))
        return EXIT_OK

    cfg, base_dir = load_config(args.config)
    if getattr(args, "jobs", 1) < 1:
        raise ConfigError("--jobs must be >= 1")
    try:
        cfg.environment.build(base_dir)
    except (MapError, ConfigError):
        raise
    except ValueError as exc:
        raise ConfigError(f"environment: {exc}") from None

    if args.command == "oracle":
        out = args.output_dir or default_output_root() / "oracle" / Path(args.config).stem
        truth = dump_oracle(cfg.environment, out, base_dir, args.tol)
        mdp = cfg.environment.build(base_dir)
        if mdp.layout is not None:
            print(policy_text(truth.q_star, mdp))
        print(f"wrote {out} ({mdp.num_states} states, {truth.iterations} sweeps)")
        return EXIT_OK

    if args.command == "run":
        manifest = run_experiment(cfg, args.output_dir, base_dir, args.jobs, args.seed_offset)
    else:
        values = [parse_scalar(v) for v in args.values.split(",") if v.strip()]
        manifest = sweep(cfg, args.param, values, args.output_dir, base_dir, args.jobs, args.seed_offset)
    print(f"wrote {manifest.path} [{manifest.data['status']}]")
    return EXIT_OK if manifest.ok else EXIT_RUNTIME


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, MapError, NumericsError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PlotError as exc:
        print(f"plot error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

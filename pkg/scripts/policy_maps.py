"""Render optimal and learned policy maps for the bundled gridworld."""

import argparse
from pathlib import Path

from uql.experiment import dump_oracle, load_config, run_experiment, with_overrides
from uql.plots import render_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", type=Path, default=Path("results/maps"))
    args = ap.parse_args()

    cfg, base = load_config("gridworld_fig2.cfg")
    dump_oracle(cfg.environment, args.output_dir / "oracle", base)
    for label in ("uql_kappa=0.5", "q_learning"):
        run_experiment(with_overrides(cfg, cfg.variants[label]), args.output_dir / label, base_dir=base)
    for sub in ("oracle", "uql_kappa=0.5", "q_learning"):
        for kind in ("policy-map", "value-map"):
            print(render_plots(args.output_dir / sub, kind))


if __name__ == "__main__":
    main()

"""Compare mellowmax, softmax-expectation and hardmax targets."""

import argparse
from pathlib import Path

from uql.experiment import load_config, sweep
from uql.plots import render_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", type=Path, default=Path("results/operator"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg, base = load_config("gridworld_operator.cfg")
    sweep(cfg, "agent.operator", ["mellowmax", "softmax-expectation", "hardmax"], args.output_dir,
          base_dir=base, jobs=args.jobs)
    print(render_plots(args.output_dir, "bias-curve"))


if __name__ == "__main__":
    main()

"""Early-phase probe bias of UQL versus the baselines on the bundled gridworld."""

import argparse
from pathlib import Path

from uql.experiment import load_config, run_experiment
from uql.plots import render_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", type=Path, default=Path("results/fig2"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg, base = load_config("gridworld_fig2.cfg")
    manifest = run_experiment(cfg, args.output_dir, base_dir=base, jobs=args.jobs)
    print(render_plots(args.output_dir, "bias-curve"))
    print(render_plots(args.output_dir, "value-curve"))
    return 0 if manifest.ok else 2


if __name__ == "__main__":
    raise SystemExit(main())

"""Sweep the temperature scale and report early bias per value."""

import argparse
import math
from pathlib import Path

import numpy as np

from uql.experiment import load_config, read_result_table, sweep
from uql.plots import render_plots


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", type=Path, default=Path("results/kappa"))
    ap.add_argument("--values", default="0.1,0.5,1,2,inf")
    ap.add_argument("--early", type=int, default=2000, help="updates counted as the early phase")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg, base = load_config("gridworld_kappa.cfg")
    kappas = [math.inf if v == "inf" else float(v) for v in args.values.split(",")]
    sweep(cfg, "agent.kappa", kappas, args.output_dir, base_dir=base, jobs=args.jobs)
    for sub in sorted(p for p in args.output_dir.iterdir() if p.is_dir()):
        vals = [v for seed in cfg.seeds for _, step, m, v in read_result_table(sub / f"seed_{seed}.csv")
                if m.startswith("probe_bias") and step <= args.early]
        print(f"{sub.name:>12}  early bias {np.mean(vals):+.4f}")
    print(render_plots(args.output_dir, "bias-curve"))


if __name__ == "__main__":
    main()

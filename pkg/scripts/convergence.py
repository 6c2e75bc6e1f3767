"""Check that every ensemble member converges to Q* on a small random MDP."""

import argparse

import numpy as np

from uql.experiment import load_config, run_seed, with_overrides
from uql.oracle import value_iteration


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--num-updates", type=int)
    args = ap.parse_args()

    cfg, base = load_config("random_convergence.cfg")
    if args.num_updates:
        cfg = with_overrides(cfg, {"num_updates": args.num_updates})
    mdp = cfg.environment.build(base)
    truth = value_iteration(mdp)
    for seed in cfg.seeds:
        res = run_seed(cfg, seed, base, mdp, truth)
        err = np.abs(res.tables - truth.q_star).max()
        spread = np.max(res.tables.max(axis=0) - res.tables.min(axis=0))
        print(f"seed {seed}: max |Q_i - Q*| {err:.2e}  spread {spread:.2e}")


if __name__ == "__main__":
    main()

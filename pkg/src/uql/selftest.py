"""Fast randomized property checks runnable without the test suite."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .agent import AgentConfig, Init, LearningRate, run_uniform_update_phase
from .baselines import make_learner
from .experiment import dumps_config, load_config, loads_config
from .mdp import random_mdp
from .numerics import BetaSolverConfig, discrepancy_rows, mellowmax_rows, solve_beta_rows
from .oracle import bellman_backup, value_iteration


def _random_rows(rng, n, a):
    values = rng.normal(scale=rng.uniform(0.1, 10), size=(n, a))
    prior = rng.dirichlet(np.ones(a), size=n) + 1e-3
    return values, prior / prior.sum(axis=1, keepdims=True)


def check_mellowmax_bounds(rng) -> str:
    values, prior = _random_rows(rng, 2000, 4)
    w = np.exp(rng.uniform(-6, 6, size=2000))
    mm = mellowmax_rows(values, prior, w)
    lo = (prior * values).sum(axis=1)
    assert np.all(mm >= lo - 1e-10) and np.all(mm <= values.max(axis=1) + 1e-10)
    shift = rng.normal(size=2000)
    assert np.allclose(mellowmax_rows(values + shift[:, None], prior, w), mm + shift, atol=1e-10, rtol=0)
    return "2000 vectors between prior mean and max, translation equivariant"


def check_mellowmax_monotone(rng) -> str:
    values, prior = _random_rows(rng, 2000, 5)
    w = np.exp(rng.uniform(-5, 5, size=2000))
    assert np.all(mellowmax_rows(values, prior, 2 * w) <= mellowmax_rows(values, prior, w) + 1e-10)
    assert np.array_equal(mellowmax_rows(values, prior, 0.0), values.max(axis=1))
    return "nonincreasing in w, exact max at w=0"


def check_contraction(rng) -> str:
    for _ in range(200):
        mdp = random_mdp(int(rng.integers(2, 6)), int(rng.integers(2, 4)), float(rng.uniform(0, 0.99)), rng)
        qi, qj = rng.normal(size=(2, mdp.num_states, mdp.num_actions)) * 3
        w = float(np.exp(rng.uniform(-4, 4)))
        lhs = np.abs(bellman_backup(mdp, qi, w) - bellman_backup(mdp, qj, w)).max()
        assert lhs <= mdp.discount * np.abs(qi - qj).max() + 1e-10
    return "200 random soft Bellman pairs contract by gamma"


def check_solver(rng) -> str:
    cfg = BetaSolverConfig()
    q = rng.normal(size=(2000, 4, 3))
    beta = solve_beta_rows(q, np.full(3, 1 / 3), cfg)
    interior = (beta > cfg.beta_min) & (beta < cfg.beta_max)
    resid = np.abs(discrepancy_rows(q[interior], np.full(3, 1 / 3), beta[interior]))
    assert interior.sum() > 1000 and resid.max() <= 1e-6
    return f"{int(interior.sum())} interior roots, max residual {resid.max():.1e}"


def check_degeneration(rng) -> str:
    mdp = random_mdp(4, 3, 0.9, rng, num_terminal=1)
    cfg = AgentConfig(ensemble_size=1, kappa=math.inf, learning_rate=LearningRate(value=0.3),
                      init=Init("uniform", low=0.0, high=1.0))
    tables = []
    for algo in ("uql", "q-learning"):
        learner = make_learner(algo, 4, 3, 0.9, cfg, np.random.default_rng(5), terminal=mdp.terminal)
        for _ in run_uniform_update_phase(mdp, learner, 500, np.random.default_rng(6), record_interval=500):
            pass
        tables.append(learner.tables)
    assert np.array_equal(tables[0], tables[1])
    return "kappa=inf, K=1 matches Q-learning bit for bit"


def check_oracle(rng) -> str:
    mdp = random_mdp(5, 3, 0.8, rng)
    truth = value_iteration(mdp)
    assert np.abs(bellman_backup(mdp, truth.q_star) - truth.q_star).max() <= 1e-9
    return "value iteration reaches the Bellman fixed point"


def check_config_roundtrip(rng) -> str:
    cfg, _ = load_config("gridworld_fig2.cfg")
    assert loads_config(dumps_config(cfg)) == cfg
    return "bundled config survives parse, dump, parse"


CHECKS: dict[str, Callable] = {
    "mellowmax-bounds": check_mellowmax_bounds,
    "mellowmax-monotone": check_mellowmax_monotone,
    "contraction": check_contraction,
    "beta-solver": check_solver,
    "degeneration": check_degeneration,
    "oracle": check_oracle,
    "config-roundtrip": check_config_roundtrip,
}


def run_selftest(seed: int = 0, out=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        rng = np.random.default_rng(seed)
        try:
            detail = check(rng)
            out(f"PASS {name}: {detail}")
        except AssertionError as exc:
            ok = False
            out(f"FAIL {name}: {exc or 'property violated'}")
    return ok

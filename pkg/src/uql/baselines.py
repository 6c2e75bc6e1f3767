"""Reference update rules: Q-learning, Double Q-learning, fixed-beta soft Q-learning
and the ensemble-mean target.

Each rule exists as a single-table step function and as an ensemble learner
that plugs into the run loops in :mod:`uql.agent`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .agent import Init, LearningRate, NumericFault, TabularLearner, UQLAgent, td_blend
from .mdp import Transition
from .numerics import PriorPolicy, mellowmax_rows

BASELINE_KINDS = ("q-learning", "double-q", "sql-fixed-beta", "ensemble-mean")


@dataclass
class BaselineKind:
    kind: str = "q-learning"
    beta: float = 1.0
    beta_final: Optional[float] = None
    beta_anneal_updates: int = 0

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"baseline kind must be one of {BASELINE_KINDS}")
        if self.kind == "sql-fixed-beta" and not self.beta > 0:
            raise ValueError("sql-fixed-beta needs beta > 0")

    def beta_at(self, num_updates: int) -> float:
        """Constant beta, or linear interpolation to ``beta_final``."""
        if self.beta_final is None or self.beta_anneal_updates <= 0:
            return self.beta
        frac = min(num_updates / self.beta_anneal_updates, 1.0)
        return self.beta + frac * (self.beta_final - self.beta)


# ---------------------------------------------------------------------------
# Single-table step functions
# ---------------------------------------------------------------------------


def q_learning_update(table: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    target = t.reward if t.is_terminal else t.reward + gamma * table[t.next_state].max()
    table[t.state, t.action] = td_blend(table[t.state, t.action], target, alpha)
    return table


def double_q_update(table_a: np.ndarray, table_b: np.ndarray, t: Transition, alpha: float,
                    gamma: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Tabular Double Q-learning; a fair coin picks which table is updated."""
    updater, other = (table_a, table_b) if rng.random() < 0.5 else (table_b, table_a)
    _double_step(updater, other, t, alpha, gamma)
    return table_a, table_b


def _double_step(updater, other, t, alpha, gamma):
    if t.is_terminal:
        target = t.reward
    else:
        target = t.reward + gamma * other[t.next_state, int(np.argmax(updater[t.next_state]))]
    updater[t.state, t.action] = td_blend(updater[t.state, t.action], target, alpha)


def sql_fixed_beta_update(table: np.ndarray, t: Transition, alpha: float, gamma: float,
                          beta: float, prior) -> np.ndarray:
    if t.is_terminal:
        target = t.reward
    else:
        w = 0.0 if math.isinf(beta) else 1.0 / beta
        target = t.reward + gamma * float(mellowmax_rows(table[t.next_state], prior, w))
    table[t.state, t.action] = td_blend(table[t.state, t.action], target, alpha)
    return table


def ensemble_mean_update(members: np.ndarray, t: Transition, alpha: float, gamma: float) -> np.ndarray:
    """Every member moves toward ``r + gamma max_a mean_k Q_k(s', a)``."""
    if members.shape[0] < 2:
        raise ValueError("ensemble-mean needs at least two members")
    target = t.reward if t.is_terminal else t.reward + gamma * members[:, t.next_state].mean(axis=0).max()
    members[:, t.state, t.action] = td_blend(members[:, t.state, t.action], target, alpha)
    return members


# ---------------------------------------------------------------------------
# Ensemble learners
# ---------------------------------------------------------------------------


def _bootstrap(rewards, dones, gamma, next_values):
    y = rewards.copy()
    live = ~dones
    y[live] = rewards[live] + gamma * next_values[live]
    return y


class QLearning(TabularLearner):
    """K independent Q-learning tables."""

    name = "q-learning"

    def _targets(self, members, states, actions, rewards, next_states, dones, rng):
        nxt = self.ensemble.members[members, next_states].max(axis=1)
        return _bootstrap(rewards, dones, self.discount, nxt)


class SoftQLearning(TabularLearner):
    """K independent soft Q-learning tables at a fixed (or linearly scheduled) beta."""

    name = "sql-fixed-beta"

    def __init__(self, *args, baseline: BaselineKind, prior: Optional[PriorPolicy] = None, **kwargs):
        super().__init__(*args, **kwargs)
        self.baseline = baseline
        self.prior = prior if prior is not None else PriorPolicy.uniform(self.num_states, self.num_actions)

    def _targets(self, members, states, actions, rewards, next_states, dones, rng):
        beta = self.baseline.beta_at(self.num_updates)
        w = 0.0 if math.isinf(beta) else 1.0 / beta
        values = self.ensemble.members[members, next_states]
        nxt = mellowmax_rows(values, self.prior.weights[next_states], w)
        return _bootstrap(rewards, dones, self.discount, nxt)


class EnsembleMean(TabularLearner):
    """Members share the max-of-mean bootstrap at each next state."""

    name = "ensemble-mean"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        if self.k < 2:
            raise ValueError("ensemble-mean needs at least two members")

    def _targets(self, members, states, actions, rewards, next_states, dones, rng):
        nxt = self.ensemble.members[:, next_states].mean(axis=0).max(axis=1)
        return _bootstrap(rewards, dones, self.discount, nxt)


class DoubleQLearning(TabularLearner):
    """K independent Double Q-learning pairs; the estimate is the pair mean."""

    name = "double-q"

    def __init__(self, num_states, num_actions, discount, ensemble_size, learning_rate: LearningRate,
                 init: Init, rng, terminal=None):
        super().__init__(num_states, num_actions, discount, 2 * ensemble_size, learning_rate, init, rng, terminal)
        self.pairs = ensemble_size

    @property
    def k(self) -> int:
        return self.pairs

    @property
    def tables(self) -> np.ndarray:
        q = self.ensemble.members
        return 0.5 * (q[0::2] + q[1::2])

    def update(self, members, states, actions, rewards, next_states, dones, rng=None):
        if rng is None:
            raise ValueError("double-q needs a random stream for its coin flips")
        super().update(members, states, actions, rewards, next_states, dones, rng)

    def _apply(self, members, states, actions, rewards, next_states, dones, rng):
        coins = rng.random(len(members)) < 0.5
        updater = 2 * members + np.where(coins, 0, 1)
        other = 2 * members + np.where(coins, 1, 0)
        q = self.ensemble.members
        greedy = q[updater, next_states].argmax(axis=1)
        nxt = q[other, next_states, greedy]
        y = _bootstrap(rewards, dones, self.discount, nxt)
        for u, s, a, target in zip(updater.tolist(), states.tolist(), actions.tolist(), y.tolist()):
            alpha = self.learning_rate(self.visits[u, s, a])
            q[u, s, a] = td_blend(q[u, s, a], target, alpha)
            self.visits[u, s, a] += 1
            if not math.isfinite(q[u, s, a]):
                raise NumericFault(f"non-finite value at table {u}, state {s}, action {a}")


def make_learner(algorithm: str, num_states: int, num_actions: int, discount: float, agent_cfg,
                 rng: np.random.Generator, baseline: Optional[BaselineKind] = None,
                 prior: Optional[PriorPolicy] = None, terminal=None) -> TabularLearner:
    """Build the learner named by ``algorithm`` ('uql' or a baseline kind)."""
    common = (num_states, num_actions, discount)
    if algorithm == "uql":
        return UQLAgent(*common, agent_cfg, rng, prior=prior, terminal=terminal)
    args = (*common, agent_cfg.ensemble_size, agent_cfg.learning_rate, agent_cfg.init, rng)
    if algorithm == "q-learning":
        return QLearning(*args, terminal=terminal)
    if algorithm == "double-q":
        return DoubleQLearning(*args, terminal=terminal)
    if algorithm == "ensemble-mean":
        return EnsembleMean(*args, terminal=terminal)
    if algorithm == "sql-fixed-beta":
        return SoftQLearning(*args, terminal=terminal, baseline=baseline or BaselineKind("sql-fixed-beta"),
                             prior=prior)
    raise ValueError(f"unknown algorithm {algorithm!r}")

"""Exact ground truth for tabular MDPs and the metrics measured against it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .mdp import TabularMdp, sample_initial_state, sample_step
from .numerics import PriorPolicy, mellowmax_rows


@dataclass(frozen=True, eq=False)
class GroundTruth:
    q_star: np.ndarray
    v_star: np.ndarray
    pi_star: tuple[frozenset, ...]
    iterations: int = 0


@dataclass
class RunRecord:
    """Metrics captured at one step of a run."""

    step: int
    probe_labels: tuple[str, ...]
    probe_values: tuple[float, ...]
    probe_bias: tuple[float, ...]
    policy_agreement: float
    ensemble_spread: float
    greedy_return: float
    median_beta: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        out = {}
        for label, v, b in zip(self.probe_labels, self.probe_values, self.probe_bias):
            out[f"probe_value:{label}"] = v
            out[f"probe_bias:{label}"] = b
        if self.probe_bias:
            out["bias_mean"] = float(np.mean(self.probe_bias))
        out["policy_agreement"] = self.policy_agreement
        out["ensemble_spread"] = self.ensemble_spread
        out["greedy_return"] = self.greedy_return
        if self.median_beta is not None:
            out["median_beta"] = self.median_beta
        out.update(self.extra)
        return out


def _as_stack(tables) -> np.ndarray:
    q = np.asarray(tables, dtype=float)
    return q[None] if q.ndim == 2 else q


def mean_table(tables) -> np.ndarray:
    return _as_stack(tables).mean(axis=0)


def bellman_backup(mdp: TabularMdp, q: np.ndarray, w: float = 0.0,
                   prior: Optional[PriorPolicy] = None) -> np.ndarray:
    """Apply the temperature-``w`` Bellman operator exactly (``w = 0`` is hardmax)."""
    if w == 0:
        v = q.max(axis=1)
    else:
        p = prior.weights if prior is not None else np.full(q.shape, 1.0 / q.shape[1])
        v = mellowmax_rows(q, p, w)
    return mdp.reward_mean + mdp.discount * (mdp.transition @ v)


def _iterate(mdp, tol, w, prior, max_iterations):
    if tol <= 0:
        raise ValueError("tol must be positive")
    gamma = mdp.discount
    q = np.zeros((mdp.num_states, mdp.num_actions))
    threshold = tol * (1 - gamma) / gamma if gamma > 0 else math.inf
    for it in range(1, max_iterations + 1):
        new = bellman_backup(mdp, q, w, prior)
        residual = np.max(np.abs(new - q))
        q = new
        if residual <= threshold:
            return q, it
    raise RuntimeError(f"value iteration did not reach tol={tol} in {max_iterations} sweeps")


def greedy_sets(q: np.ndarray, tie_tol: float) -> tuple[frozenset, ...]:
    top = q.max(axis=1, keepdims=True)
    return tuple(frozenset(np.flatnonzero(row >= t - tie_tol).tolist()) for row, t in zip(q, top[:, 0]))


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iterations: int = 1_000_000) -> GroundTruth:
    """Hard Bellman fixed point with ``||Q - Q*||_inf <= tol``."""
    q, it = _iterate(mdp, tol, 0.0, None, max_iterations)
    return GroundTruth(q, q.max(axis=1), greedy_sets(q, 2 * tol + 1e-12), it)


def soft_value_iteration(mdp: TabularMdp, w: float, tol: float = 1e-10,
                         prior: Optional[PriorPolicy] = None,
                         max_iterations: int = 1_000_000) -> np.ndarray:
    """Fixed point of the mellowmax Bellman operator at temperature ``w``."""
    if not w >= 0:
        raise ValueError("temperature must be nonnegative")
    q, _ = _iterate(mdp, tol, w, prior, max_iterations)
    return q


def policy_evaluation(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """State values of a stochastic ``(S, A)`` policy by a direct linear solve."""
    policy = np.asarray(policy, dtype=float)
    p_pi = np.einsum("sa,sat->st", policy, mdp.transition)
    r_pi = (policy * mdp.reward_mean).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * p_pi, r_pi)


def greedy_actions(tables) -> np.ndarray:
    """Greedy action of the member-mean table, lowest id on ties."""
    return mean_table(tables).argmax(axis=1)


def greedy_policy_matrix(tables) -> np.ndarray:
    q = mean_table(tables)
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), q.argmax(axis=1)] = 1.0
    return pi


def greedy_return(mdp: TabularMdp, tables) -> float:
    """Exact expected return of the greedy policy from the initial distribution."""
    v = policy_evaluation(mdp, greedy_policy_matrix(tables))
    return float(mdp.initial_distribution @ v)


def estimate_bias(tables, truth: GroundTruth, probe_states: Sequence[int]) -> np.ndarray:
    """``max_a mean_k Q_k(s, a) - V*(s)`` at each probe state."""
    q = mean_table(tables)
    probes = np.asarray(probe_states, dtype=int)
    if probes.size and (probes.min() < 0 or probes.max() >= q.shape[0]):
        raise IndexError(f"probe states {probe_states} out of range [0, {q.shape[0]})")
    return q[probes].max(axis=1) - truth.v_star[probes]


def policy_agreement(tables, truth: GroundTruth, terminal: Optional[np.ndarray] = None) -> float:
    """Fraction of non-terminal states whose greedy action is optimal."""
    actions = greedy_actions(tables)
    states = range(len(actions)) if terminal is None else np.flatnonzero(~np.asarray(terminal))
    hits = [int(actions[s]) in truth.pi_star[s] for s in states]
    return float(np.mean(hits)) if hits else 1.0


def ensemble_spread(tables) -> float:
    """``max_ij ||Q_i - Q_j||_inf``."""
    q = _as_stack(tables)
    if q.shape[0] < 2:
        return 0.0
    return float(np.max(q.max(axis=0) - q.min(axis=0)))


@dataclass(frozen=True)
class InitialStateBias:
    monte_carlo: float
    stderr: float
    exact: float
    num_rollouts: int


def rollout_return(mdp: TabularMdp, actions: np.ndarray, start: int, horizon: int,
                   rng: np.random.Generator) -> float:
    s, total, disc = start, 0.0, 1.0
    for _ in range(horizon):
        if mdp.terminal[s]:
            break
        t = sample_step(mdp, s, int(actions[s]), rng)
        total += disc * t.reward
        disc *= mdp.discount
        s = t.next_state
    return total


def initial_state_bias(mdp: TabularMdp, tables, truth: GroundTruth, num_rollouts: int,
                       rng: np.random.Generator, horizon: int = 400) -> InitialStateBias:
    """Mean of ``V_hat(s0) - R(xi)`` over greedy rollouts, plus the exact analogue.

    ``truth`` is accepted for interface symmetry; the exact variant uses the
    greedy policy's own value, not ``V*``.
    """
    q = mean_table(tables)
    v_hat = q.max(axis=1)
    actions = q.argmax(axis=1)
    gaps = np.empty(num_rollouts)
    for i in range(num_rollouts):
        s0 = sample_initial_state(mdp, rng)
        gaps[i] = v_hat[s0] - rollout_return(mdp, actions, s0, horizon, rng)
    v_pi = policy_evaluation(mdp, greedy_policy_matrix(q))
    exact = float(mdp.initial_distribution @ (v_hat - v_pi))
    mc = float(gaps.mean()) if num_rollouts else math.nan
    se = float(gaps.std(ddof=1) / math.sqrt(num_rollouts)) if num_rollouts > 1 else math.nan
    return InitialStateBias(mc, se, exact, num_rollouts)

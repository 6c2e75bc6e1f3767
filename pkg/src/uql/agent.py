"""Ensemble tabular learners, the unbiased soft Q-learning update and run loops."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .mdp import TabularMdp, Transition, sample_initial_state, sample_outcomes, sample_step, uniform_sa_sampler
from .numerics import OPERATORS, BetaSolverConfig, PriorPolicy, reduce_rows, solve_beta_rows
from .oracle import (GroundTruth, RunRecord, ensemble_spread, estimate_bias, greedy_return,
                     policy_agreement, value_iteration)

SHARING_MODES = ("transition", "state-action", "independent")


class NumericFault(FloatingPointError):
    """A learner produced non-finite values."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class LearningRate:
    """Constant ``value`` or per-pair polynomial ``scale / (visits + offset) ** power``."""

    kind: str = "constant"
    value: float = 0.1
    scale: float = 1.0
    offset: float = 1.0
    power: float = 0.8

    def __post_init__(self):
        if self.kind == "constant":
            if not 0 <= self.value <= 1:
                raise ValueError("constant learning rate must lie in [0, 1]")
        elif self.kind == "polynomial":
            if not 0.5 < self.power <= 1:
                raise ValueError("polynomial power must lie in (0.5, 1]")
            if self.offset <= 0 or not 0 < self.scale / self.offset ** self.power <= 1:
                raise ValueError("polynomial schedule must start inside (0, 1]")
        else:
            raise ValueError(f"unknown learning-rate kind {self.kind!r}")

    def __call__(self, visits):
        if self.kind == "constant":
            return self.value
        return self.scale / (visits + self.offset) ** self.power


@dataclass
class Exploration:
    kind: str = "epsilon-greedy"
    epsilon: float = 0.1
    epsilon_final: Optional[float] = None
    decay_steps: int = 0
    ucb_lambda: float = 1.0

    def __post_init__(self):
        if self.kind not in ("epsilon-greedy", "ucb", "uniform"):
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")

    def epsilon_at(self, step: int) -> float:
        if self.epsilon_final is None or self.decay_steps <= 0:
            return self.epsilon
        frac = min(step / self.decay_steps, 1.0)
        return self.epsilon + frac * (self.epsilon_final - self.epsilon)


@dataclass
class Init:
    kind: str = "constant"
    value: float = 0.0
    low: float = 0.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "uniform"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "uniform" and not self.low <= self.high:
            raise ValueError("init.low must not exceed init.high")


@dataclass
class AgentConfig:
    ensemble_size: int = 5
    kappa: float = 1.0
    operator: str = "mellowmax"
    learning_rate: LearningRate = field(default_factory=LearningRate)
    solver: BetaSolverConfig = field(default_factory=BetaSolverConfig)
    target_sync_interval: int = 1
    sample_sharing: str = "transition"
    exploration: Exploration = field(default_factory=Exploration)
    init: Init = field(default_factory=Init)

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive (inf allowed)")
        if self.operator not in OPERATORS:
            raise ValueError(f"operator must be one of {OPERATORS}")
        if self.target_sync_interval < 1:
            raise ValueError("target_sync_interval must be >= 1")
        if self.sample_sharing not in SHARING_MODES:
            raise ValueError(f"sample_sharing must be one of {SHARING_MODES}")


@dataclass
class OnlineConfig:
    buffer_capacity: int = 10_000
    batch_size: int = 1
    learning_starts: int = 1
    max_episode_steps: int = 400
    shared_minibatch: bool = False

    def __post_init__(self):
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size")


# ---------------------------------------------------------------------------
# Replay memory and ensemble storage
# ---------------------------------------------------------------------------


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros(capacity, dtype=np.int64)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros(capacity, dtype=np.int64)
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, t: Transition) -> None:
        i = self._next
        self.states[i], self.actions[i], self.rewards[i] = t.state, t.action, t.reward
        self.next_states[i], self.dones[i] = t.next_state, t.is_terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def ordered(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        start = (self._next - self._size) % self.capacity
        return [self._get((start + j) % self.capacity) for j in range(self._size)]

    def _get(self, i) -> Transition:
        return Transition(int(self.states[i]), int(self.actions[i]), float(self.rewards[i]),
                          int(self.next_states[i]), bool(self.dones[i]))

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(self._size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        return [self._get(i) for i in self.sample_indices(batch_size, rng)]


@dataclass
class QEnsemble:
    members: np.ndarray
    targets: np.ndarray = None

    def __post_init__(self):
        self.members = np.array(self.members, dtype=float)
        if self.members.ndim != 3 or self.members.shape[0] < 1:
            raise ValueError("members must have shape (K, S, A) with K >= 1")
        self.targets = self.members.copy() if self.targets is None else np.array(self.targets, dtype=float)
        if self.targets.shape != self.members.shape:
            raise ValueError("targets must match members in shape")

    @property
    def k(self) -> int:
        return self.members.shape[0]

    def mean(self) -> np.ndarray:
        return self.members.mean(axis=0)

    def sync_targets(self) -> np.ndarray:
        """Copy members into targets; returns the mask of states that changed."""
        changed = np.any(self.targets != self.members, axis=(0, 2))
        self.targets[...] = self.members
        return changed


def td_blend(q, target, alpha):
    """``(1 - alpha) q + alpha target``; exact for alpha in {0, 1}."""
    return (1.0 - alpha) * q + alpha * target


def initial_tables(k: int, num_states: int, num_actions: int, init: Init,
                   rng: np.random.Generator, terminal: Optional[np.ndarray] = None) -> np.ndarray:
    shape = (k, num_states, num_actions)
    if init.kind == "constant":
        q = np.full(shape, float(init.value))
    else:
        q = rng.uniform(init.low, init.high, size=shape)
    if terminal is not None:
        q[:, np.asarray(terminal, dtype=bool)] = 0.0
    return q


# ---------------------------------------------------------------------------
# Learners
# ---------------------------------------------------------------------------


class TabularLearner:
    """Common state for ensemble tabular learners.

    Subclasses implement ``_targets`` for a flat batch of (member, s, a, r, s', done)
    entries; this class handles step sizes, visit counts and bookkeeping.
    """

    name = "tabular"

    def __init__(self, num_states: int, num_actions: int, discount: float, ensemble_size: int,
                 learning_rate: LearningRate, init: Init, rng: np.random.Generator,
                 terminal: Optional[np.ndarray] = None):
        self.num_states, self.num_actions = num_states, num_actions
        self.discount = discount
        self.learning_rate = learning_rate
        self.ensemble = QEnsemble(initial_tables(ensemble_size, num_states, num_actions, init, rng, terminal))
        self.visits = np.zeros((ensemble_size, num_states, num_actions), dtype=np.int64)
        self.num_updates = 0

    @property
    def k(self) -> int:
        return self.ensemble.k

    @property
    def tables(self) -> np.ndarray:
        """Estimate tables, shape ``(K, S, A)``, used for metrics and acting."""
        return self.ensemble.members

    def update(self, members, states, actions, rewards, next_states, dones, rng=None) -> None:
        members = np.asarray(members, dtype=np.int64)
        if members.size == 0:
            raise ValueError("update batch must be nonempty")
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        rewards = np.asarray(rewards, dtype=float)
        next_states = np.asarray(next_states, dtype=np.int64)
        dones = np.asarray(dones, dtype=bool)
        self._apply(members, states, actions, rewards, next_states, dones, rng)
        self.num_updates += 1
        self._after_update()

    def update_transitions(self, member_batches: Sequence[Sequence[Transition]], rng=None) -> None:
        """One update where member ``k`` trains on ``member_batches[k]``."""
        flat = [(k, t) for k, batch in enumerate(member_batches) for t in batch]
        if not flat:
            raise ValueError("update batch must be nonempty")
        cols = list(zip(*[(k, *t) for k, t in flat]))
        self.update(*cols, rng=rng)

    def _apply(self, members, states, actions, rewards, next_states, dones, rng) -> None:
        y = self._targets(members, states, actions, rewards, next_states, dones, rng)
        q = self.ensemble.members
        for k, s, a, target in zip(members.tolist(), states.tolist(), actions.tolist(), y.tolist()):
            alpha = self.learning_rate(self.visits[k, s, a])
            q[k, s, a] = td_blend(q[k, s, a], target, alpha)
            self.visits[k, s, a] += 1
            if not math.isfinite(q[k, s, a]):
                raise NumericFault(f"non-finite value at member {k}, state {s}, action {a}")

    def _targets(self, members, states, actions, rewards, next_states, dones, rng) -> np.ndarray:
        raise NotImplementedError

    def _after_update(self) -> None:
        pass

    def median_beta(self, states=None) -> Optional[float]:
        return None

    def select_action(self, state: int, exploration: Exploration, rng: np.random.Generator,
                      step: int = 0) -> int:
        return select_action(self.tables, state, exploration, rng, step)

    def state_dict(self) -> dict:
        return {"members": self.ensemble.members.copy(), "targets": self.ensemble.targets.copy(),
                "visits": self.visits.copy(), "num_updates": np.array(self.num_updates)}

    def load_state_dict(self, state: dict) -> None:
        self.ensemble.members[...] = state["members"]
        self.ensemble.targets[...] = state["targets"]
        self.visits[...] = state["visits"]
        self.num_updates = int(state["num_updates"])


def uql_target(member_next_values, reward: float, is_terminal: bool, beta: float, kappa: float,
               gamma: float, prior, operator: str = "mellowmax") -> float:
    """Single-member TD target; ``beta`` is shared across the ensemble."""
    if is_terminal:
        return float(reward)
    nxt = reduce_rows(np.asarray(member_next_values, dtype=float), prior, beta, kappa, operator)
    return float(reward + gamma * nxt)


class UQLAgent(TabularLearner):
    """Unbiased soft Q-learning over a K-member ensemble of tables.

    The inverse temperature at a next state is solved on the target tables and
    cached until that state's target rows change.
    """

    name = "uql"

    def __init__(self, num_states: int, num_actions: int, discount: float, cfg: AgentConfig,
                 rng: np.random.Generator, prior: Optional[PriorPolicy] = None,
                 terminal: Optional[np.ndarray] = None):
        super().__init__(num_states, num_actions, discount, cfg.ensemble_size, cfg.learning_rate,
                         cfg.init, rng, terminal)
        self.cfg = cfg
        self.prior = prior if prior is not None else PriorPolicy.uniform(num_states, num_actions)
        self._beta = np.full(num_states, np.nan)

    @property
    def needs_beta(self) -> bool:
        return not math.isinf(self.cfg.kappa) and self.cfg.operator in ("mellowmax", "softmax-expectation")

    def betas(self, states) -> np.ndarray:
        """Solved inverse temperatures at ``states`` from the target tables."""
        states = np.asarray(states, dtype=np.int64)
        stale = states[np.isnan(self._beta[states])]
        if stale.size:
            stale = np.unique(stale)
            q = self.ensemble.targets[:, stale, :].transpose(1, 0, 2)
            self._beta[stale] = solve_beta_rows(q, self.prior.weights[stale], self.cfg.solver)
        return self._beta[states]

    def _targets(self, members, states, actions, rewards, next_states, dones, rng):
        live = ~dones
        y = rewards.copy()
        if live.any():
            s2 = next_states[live]
            values = self.ensemble.members[members[live], s2]
            beta = self.betas(s2) if self.needs_beta else np.full(s2.shape, math.inf)
            nxt = reduce_rows(values, self.prior.weights[s2], beta, self.cfg.kappa, self.cfg.operator)
            y[live] = rewards[live] + self.discount * nxt
        return y

    def _after_update(self):
        if self.num_updates % self.cfg.target_sync_interval == 0:
            changed = self.ensemble.sync_targets()
            self._beta[changed] = np.nan

    def median_beta(self, states=None) -> Optional[float]:
        if states is None:
            states = np.arange(self.num_states)
        return float(np.median(self.betas(states)))

    def load_state_dict(self, state: dict) -> None:
        super().load_state_dict(state)
        self._beta[:] = np.nan


def uql_update_batch(agent: UQLAgent, batch: Sequence[Transition]) -> UQLAgent:
    """Apply one minibatch to every member (shared batch)."""
    if not batch:
        raise ValueError("batch must be nonempty")
    agent.update_transitions([batch] * agent.k)
    return agent


def select_action(tables, state: int, exploration: Exploration, rng: np.random.Generator,
                  step: int = 0) -> int:
    """Behaviour action from ensemble tables; ties go to the lowest action id."""
    q = np.asarray(tables, dtype=float)
    q = q[None] if q.ndim == 2 else q
    row = q[:, state, :]
    num_actions = row.shape[1]
    if exploration.kind == "uniform":
        return int(rng.integers(num_actions))
    if exploration.kind == "ucb":
        return int(np.argmax(row.mean(axis=0) + exploration.ucb_lambda * row.std(axis=0)))
    if rng.random() < exploration.epsilon_at(step):
        return int(rng.integers(num_actions))
    return int(np.argmax(row.mean(axis=0)))


# ---------------------------------------------------------------------------
# Run loops
# ---------------------------------------------------------------------------


def _record(mdp: TabularMdp, learner: TabularLearner, truth: GroundTruth, probes, labels, step) -> RunRecord:
    tables = learner.tables
    q_mean = tables.mean(axis=0)
    probes = np.asarray(probes, dtype=int)
    values = q_mean[probes].max(axis=1) if probes.size else np.array([])
    bias = estimate_bias(tables, truth, probes) if probes.size else np.array([])
    nonterminal = mdp.nonterminal_states
    record = RunRecord(
        step=step,
        probe_labels=tuple(labels),
        probe_values=tuple(float(v) for v in values),
        probe_bias=tuple(float(b) for b in bias),
        policy_agreement=policy_agreement(tables, truth, mdp.terminal),
        ensemble_spread=ensemble_spread(tables),
        greedy_return=greedy_return(mdp, tables),
        median_beta=learner.median_beta(nonterminal),
    )
    for name, value in record.metrics().items():
        if not math.isfinite(value):
            raise NumericFault(f"metric {name} is not finite at step {step}")
    return record


def _probe_labels(probes, labels):
    if labels is not None:
        return list(labels)
    return [f"s{int(s)}" for s in probes]


def run_uniform_update_phase(mdp: TabularMdp, learner: TabularLearner, num_updates: int,
                             rng: np.random.Generator, probe_states: Sequence[int] = (),
                             truth: Optional[GroundTruth] = None, record_interval: int = 50,
                             sharing: str = "transition", probe_labels=None,
                             start_step: int = 0) -> Iterator[RunRecord]:
    """Updates on uniformly drawn (s, a) pairs with outcomes sampled from the model.

    ``sharing`` controls what ensemble members have in common each update:
    the whole transition, only the (s, a) pair, or nothing.
    """
    if sharing not in SHARING_MODES:
        raise ValueError(f"sharing must be one of {SHARING_MODES}")
    if record_interval < 1:
        raise ValueError("record_interval must be >= 1")
    for s in probe_states:
        mdp.check_state(s)
    if num_updates <= 0:
        return
    truth = truth if truth is not None else value_iteration(mdp)
    labels = _probe_labels(probe_states, probe_labels)
    k = learner.k
    members = np.arange(k)
    term = mdp.terminal
    end = start_step + num_updates
    for step in range(start_step + 1, end + 1):
        if sharing == "independent":
            sa = [uniform_sa_sampler(mdp, rng) for _ in range(k)]
            states = np.array([p[0] for p in sa])
            actions = np.array([p[1] for p in sa])
            outcomes = [sample_outcomes(mdp, s, a, 1, rng) for s, a in sa]
            rewards = np.concatenate([o[0] for o in outcomes])
            nxt = np.concatenate([o[1] for o in outcomes])
        else:
            s, a = uniform_sa_sampler(mdp, rng)
            states = np.full(k, s)
            actions = np.full(k, a)
            if sharing == "transition":
                r, n = sample_outcomes(mdp, s, a, 1, rng)
                rewards, nxt = np.repeat(r, k), np.repeat(n, k)
            else:
                rewards, nxt = sample_outcomes(mdp, s, a, k, rng)
        learner.update(members, states, actions, rewards, nxt, term[nxt], rng)
        if step % record_interval == 0 or step == end:
            yield _record(mdp, learner, truth, probe_states, labels, step)


@dataclass
class OnlineState:
    """Environment-side state of an online run, needed to resume it."""

    state: Optional[int] = None
    episode_steps: int = 0
    episode_return: float = 0.0
    episodes: int = 0
    returns: list = field(default_factory=list)


def run_online_phase(mdp: TabularMdp, learner: TabularLearner, online: OnlineConfig,
                     exploration: Exploration, buffer: ReplayBuffer, num_steps: int,
                     rng: np.random.Generator, probe_states: Sequence[int] = (),
                     truth: Optional[GroundTruth] = None, record_interval: int = 50,
                     probe_labels=None, env_state: Optional[OnlineState] = None,
                     start_step: int = 0, visit_counts: Optional[np.ndarray] = None) -> Iterator[RunRecord]:
    """Interact, store to replay, then update each member on its own minibatch."""
    if buffer.capacity < online.batch_size:
        raise ValueError("buffer capacity must be >= batch size")
    if num_steps <= 0:
        return
    truth = truth if truth is not None else value_iteration(mdp)
    labels = _probe_labels(probe_states, probe_labels)
    env = env_state if env_state is not None else OnlineState()
    k = learner.k
    end = start_step + num_steps
    for step in range(start_step + 1, end + 1):
        if env.state is None or mdp.terminal[env.state] or env.episode_steps >= online.max_episode_steps:
            if env.state is not None:
                env.returns.append(env.episode_return)
                env.episodes += 1
            env.state = sample_initial_state(mdp, rng)
            env.episode_steps, env.episode_return = 0, 0.0
        a = learner.select_action(env.state, exploration, rng, step)
        t = sample_step(mdp, env.state, a, rng)
        if visit_counts is not None:
            visit_counts[t.state, t.action] += 1
        buffer.add(t)
        env.episode_return += mdp.discount ** env.episode_steps * t.reward
        env.episode_steps += 1
        env.state = t.next_state
        if len(buffer) >= online.learning_starts:
            if online.shared_minibatch:
                idx = np.tile(buffer.sample_indices(online.batch_size, rng), k)
            else:
                idx = np.concatenate([buffer.sample_indices(online.batch_size, rng) for _ in range(k)])
            members = np.repeat(np.arange(k), online.batch_size)
            learner.update(members, buffer.states[idx], buffer.actions[idx], buffer.rewards[idx],
                           buffer.next_states[idx], buffer.dones[idx], rng)
        if step % record_interval == 0 or step == end:
            record = _record(mdp, learner, truth, probe_states, labels, step)
            if env.returns:
                record.extra["episode_return"] = float(np.mean(env.returns[-10:]))
            yield record


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, learner: TabularLearner, step: int, rng: np.random.Generator) -> None:
    """Write every learner table, the step counter and the RNG state to ``path`` (npz)."""
    meta = {"learner": learner.name, "step": int(step), "rng": rng.bit_generator.state}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **learner.state_dict())


def load_checkpoint(path, learner: TabularLearner) -> tuple[int, np.random.Generator]:
    """Restore ``learner`` in place; returns ``(step, rng)`` ready to resume."""
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["learner"] != learner.name:
            raise ValueError(f"checkpoint is for {meta['learner']!r}, not {learner.name!r}")
        learner.load_state_dict({key: data[key] for key in data.files if key != "meta"})
    state = meta["rng"]
    rng = np.random.Generator(getattr(np.random, state["bit_generator"])())
    rng.bit_generator.state = state
    return meta["step"], rng

"""Finite MDPs, transition sampling and the Gridworld family."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12

# Compass order: N, NE, E, SE, S, SW, W, NW as (drow, dcol).
COMPASS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")
MOVES = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))
ARROWS = ("↑", "↗", "→", "↘", "↓", "↙", "←", "↖")

DEFAULT_MAP = """\
S.......
........
..###...
..###...
......#.
......#.
........
.......G
"""


class MapError(ValueError):
    """Raised for malformed Gridworld maps."""


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int
    is_terminal: bool


@dataclass(frozen=True)
class GridLayout:
    """Cell coordinates of every state in a Gridworld MDP."""

    shape: tuple[int, int]
    cells: tuple[tuple[int, int], ...]
    walls: tuple[tuple[int, int], ...]

    def state_of(self, row: int, col: int) -> int:
        try:
            return self.cells.index((row, col))
        except ValueError:
            raise KeyError(f"cell ({row}, {col}) is not a state") from None


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transition: np.ndarray
    reward_mean: np.ndarray
    discount: float
    terminal: np.ndarray
    reward_noise_std: float = 0.0
    initial_distribution: Optional[np.ndarray] = None
    layout: Optional[GridLayout] = None
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        r = np.array(self.reward_mean, dtype=float)
        term = np.array(self.terminal, dtype=bool)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {p.shape}")
        S, A, _ = p.shape
        if r.shape != (S, A):
            raise ValueError(f"reward_mean must have shape {(S, A)}, got {r.shape}")
        if term.shape != (S,):
            raise ValueError(f"terminal must have shape {(S,)}, got {term.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > ROW_SUM_TOL):
            raise ValueError("every transition row must be a probability distribution")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if self.reward_noise_std < 0:
            raise ValueError("reward_noise_std must be nonnegative")
        if term.all():
            raise ValueError("at least one state must be non-terminal")
        for s in np.flatnonzero(term):
            if not np.all(p[s, :, s] == 1.0) or np.any(r[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        if self.initial_distribution is None:
            mu = (~term).astype(float)
            mu /= mu.sum()
        else:
            mu = np.array(self.initial_distribution, dtype=float)
            if mu.shape != (S,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > ROW_SUM_TOL:
                raise ValueError("initial_distribution must be a distribution over states")
        for name, arr in (("transition", p), ("reward_mean", r), ("terminal", term),
                          ("initial_distribution", mu)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        cdf = np.cumsum(p, axis=2)
        cdf.setflags(write=False)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def nonterminal_states(self) -> np.ndarray:
        return np.flatnonzero(~self.terminal)

    def check_state(self, state: int) -> None:
        if not 0 <= state < self.num_states:
            raise IndexError(f"state {state} out of range [0, {self.num_states})")

    def check_action(self, action: int) -> None:
        if not 0 <= action < self.num_actions:
            raise IndexError(f"action {action} out of range [0, {self.num_actions})")


def sample_step(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator) -> Transition:
    """Draw one transition from ``(state, action)``.

    Terminal states return a zero-reward self-loop without consuming randomness.
    """
    mdp.check_state(state)
    mdp.check_action(action)
    if mdp.terminal[state]:
        return Transition(int(state), int(action), 0.0, int(state), True)
    cdf = mdp._cdf[state, action]
    nxt = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    reward = float(mdp.reward_mean[state, action])
    if mdp.reward_noise_std > 0:
        reward += mdp.reward_noise_std * float(rng.standard_normal())
    return Transition(int(state), int(action), reward, nxt, bool(mdp.terminal[nxt]))


def sample_outcomes(mdp: TabularMdp, state: int, action: int, size: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``sample_step``: ``size`` independent (reward, next_state) draws.

    For ``size == 1`` the random stream is consumed exactly as by ``sample_step``.
    """
    if mdp.terminal[state]:
        return np.zeros(size), np.full(size, state, dtype=np.int64)
    cdf = mdp._cdf[state, action]
    if size == 1:
        t = sample_step(mdp, state, action, rng)
        return np.array([t.reward]), np.array([t.next_state], dtype=np.int64)
    nxt = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right").astype(np.int64)
    rewards = np.full(size, float(mdp.reward_mean[state, action]))
    if mdp.reward_noise_std > 0:
        rewards = rewards + mdp.reward_noise_std * rng.standard_normal(size)
    return rewards, nxt


def uniform_sa_sampler(mdp: TabularMdp, rng: np.random.Generator) -> tuple[int, int]:
    """Uniform draw over non-terminal states x actions."""
    states = mdp.nonterminal_states
    idx = int(rng.integers(len(states) * mdp.num_actions))
    return int(states[idx // mdp.num_actions]), idx % mdp.num_actions


def sample_initial_state(mdp: TabularMdp, rng: np.random.Generator) -> int:
    cdf = np.cumsum(mdp.initial_distribution)
    return int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))


# ---------------------------------------------------------------------------
# Gridworld
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridworldSpec:
    ascii_map: str = DEFAULT_MAP
    slip_prob: float = 0.2
    goal_reward: float = 1.0
    step_reward: float = 0.0
    discount: float = 0.95
    reward_noise_std: float = 0.0


def parse_map(ascii_map: str) -> list[str]:
    rows = [line.strip() for line in ascii_map.strip().splitlines() if line.strip()]
    if not rows:
        raise MapError("map is empty")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise MapError(f"map is not rectangular (row widths {sorted(widths)})")
    bad = {c for r in rows for c in r} - set("#.GS")
    if bad:
        raise MapError(f"map contains unknown characters {sorted(bad)}")
    goals = sum(r.count("G") for r in rows)
    if goals != 1:
        raise MapError(f"map must contain exactly one goal 'G', found {goals}")
    if sum(r.count("S") for r in rows) > 1:
        raise MapError("map contains more than one start 'S'")
    return rows


def load_map(path: str | Path) -> str:
    return Path(path).read_text()


def build_gridworld(spec: GridworldSpec) -> TabularMdp:
    """Eight-direction slippery Gridworld with one absorbing goal.

    The intended move succeeds with probability ``1 - slip_prob``; otherwise the
    agent lands uniformly on a valid neighbour of the intended cell (the
    current cell if it has none). Blocked moves keep the agent in place.
    """
    if not 0.0 <= spec.slip_prob < 1.0:
        raise ValueError(f"slip_prob must lie in [0, 1), got {spec.slip_prob}")
    rows = parse_map(spec.ascii_map)
    H, W = len(rows), len(rows[0])
    cells = [(i, j) for i in range(H) for j in range(W) if rows[i][j] != "#"]
    walls = tuple((i, j) for i in range(H) for j in range(W) if rows[i][j] == "#")
    index = {c: k for k, c in enumerate(cells)}
    goal = next(index[c] for c in cells if rows[c[0]][c[1]] == "G")
    S, A = len(cells), len(MOVES)

    def free(i, j):
        return 0 <= i < H and 0 <= j < W and rows[i][j] != "#"

    def neighbours(i, j):
        return [(i + di, j + dj) for di, dj in MOVES if free(i + di, j + dj)]

    P = np.zeros((S, A, S))
    for s, (i, j) in enumerate(cells):
        if s == goal:
            P[s, :, s] = 1.0
            continue
        for a, (di, dj) in enumerate(MOVES):
            dest = (i + di, j + dj) if free(i + di, j + dj) else (i, j)
            P[s, a, index[dest]] += 1.0 - spec.slip_prob
            if spec.slip_prob > 0:
                nb = neighbours(*dest) or [(i, j)]
                for c in nb:
                    P[s, a, index[c]] += spec.slip_prob / len(nb)
    terminal = np.zeros(S, dtype=bool)
    terminal[goal] = True
    R = spec.step_reward + (spec.goal_reward - spec.step_reward) * P[:, :, goal]
    R[goal] = 0.0

    starts = [index[c] for c in cells if rows[c[0]][c[1]] == "S"]
    mu = None
    if starts:
        mu = np.zeros(S)
        mu[starts[0]] = 1.0
    layout = GridLayout(shape=(H, W), cells=tuple(cells), walls=walls)
    return TabularMdp(P, R, spec.discount, terminal, spec.reward_noise_std, mu, layout)


# ---------------------------------------------------------------------------
# Other small MDP families used by tests and the convergence experiments
# ---------------------------------------------------------------------------


def random_mdp(num_states: int, num_actions: int, discount: float, rng: np.random.Generator,
               num_terminal: int = 0, reward_noise_std: float = 0.0,
               concentration: float = 1.0) -> TabularMdp:
    """Dense random MDP: Dirichlet transition rows and Uniform(0, 1) mean rewards.

    The last ``num_terminal`` states are absorbing.
    """
    S, A = num_states, num_actions
    P = rng.dirichlet(np.full(S, concentration), size=(S, A))
    R = rng.random((S, A))
    terminal = np.zeros(S, dtype=bool)
    if num_terminal:
        terminal[S - num_terminal:] = True
        for s in range(S - num_terminal, S):
            P[s] = 0.0
            P[s, :, s] = 1.0
            R[s] = 0.0
    P /= P.sum(axis=2, keepdims=True)
    return TabularMdp(P, R, discount, terminal, reward_noise_std)


def chain_mdp(rewards: Sequence[float], discount: float, num_actions: int = 1) -> TabularMdp:
    """Deterministic chain s0 -> s1 -> ... -> terminal.

    Action 0 advances and collects ``rewards[i]``; any other action stays put
    with zero reward.
    """
    n = len(rewards)
    S = n + 1
    P = np.zeros((S, num_actions, S))
    R = np.zeros((S, num_actions))
    for s in range(n):
        P[s, 0, s + 1] = 1.0
        R[s, 0] = rewards[s]
        for a in range(1, num_actions):
            P[s, a, s] = 1.0
    P[n, :, n] = 1.0
    terminal = np.zeros(S, dtype=bool)
    terminal[n] = True
    mu = np.zeros(S)
    mu[0] = 1.0
    return TabularMdp(P, R, discount, terminal, 0.0, mu)

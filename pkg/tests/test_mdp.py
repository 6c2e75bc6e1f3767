import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from uql.mdp import (DEFAULT_MAP, MOVES, GridworldSpec, MapError, TabularMdp, Transition, build_gridworld,
                     chain_mdp, parse_map, random_mdp, sample_outcomes, sample_step, uniform_sa_sampler)

EAST = MOVES.index((0, 1))
NORTH = MOVES.index((-1, 0))


def test_two_cell_map_east_reaches_goal():
    mdp = build_gridworld(GridworldSpec("SG", slip_prob=0.0, goal_reward=2.5))
    assert mdp.transition[0, EAST, 1] == 1.0
    assert mdp.reward_mean[0, EAST] == 2.5
    t = sample_step(mdp, 0, EAST, np.random.default_rng(0))
    assert t == Transition(0, EAST, 2.5, 1, True)


def test_blocked_moves_self_loop_without_slip():
    mdp = build_gridworld(GridworldSpec("S#\n.G", slip_prob=0.0))
    for a in range(8):
        row = mdp.transition[0, a]
        dest = np.flatnonzero(row)
        assert row.sum() == 1.0 and len(dest) == 1
    # every move from the top-left corner except S and SE is blocked
    for a, (dr, dc) in enumerate(MOVES):
        if (dr, dc) not in [(1, 0), (1, 1)]:
            assert mdp.transition[0, a, 0] == 1.0


def test_slip_spreads_over_neighbours_of_intended_cell():
    mdp = build_gridworld(GridworldSpec("...\n...\n..G", slip_prob=0.2))
    center = mdp.layout.state_of(1, 1)
    row = mdp.transition[center, NORTH]
    intended = mdp.layout.state_of(0, 1)
    nbrs = [mdp.layout.state_of(r, c) for r, c in [(0, 0), (0, 2), (1, 0), (1, 1), (1, 2)]]
    expected = np.zeros(mdp.num_states)
    expected[intended] = 0.8
    expected[nbrs] += 0.2 / 5
    np.testing.assert_allclose(row, expected, atol=1e-15)
    assert abs(row.sum() - 1) <= 1e-12


def test_default_map_layout():
    mdp = build_gridworld(GridworldSpec())
    assert mdp.layout.shape == (8, 8)
    assert mdp.num_states == 64 - DEFAULT_MAP.count("#")
    assert mdp.num_actions == 8
    assert mdp.terminal.sum() == 1
    assert mdp.initial_distribution[mdp.layout.state_of(0, 0)] == 1.0


@pytest.mark.parametrize("text,msg", [
    ("S.\n.", "rectangular"),
    ("S.x\n..G", "unknown"),
    ("S..\n...", "goal"),
    ("SSG", "start"),
    ("", "empty"),
])
def test_bad_maps_rejected(text, msg):
    with pytest.raises(MapError, match=msg):
        parse_map(text)


def test_rows_must_sum_to_one():
    P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    with pytest.raises(ValueError):
        TabularMdp(P, np.zeros((2, 1)), 0.9, np.array([False, True]))


def test_deterministic_row_reward_exact():
    mdp = chain_mdp([0.25, 0.75], 0.9)
    rng = np.random.default_rng(3)
    for _ in range(10):
        assert sample_step(mdp, 1, 0, rng) == Transition(1, 0, 0.75, 2, True)


def test_terminal_step_is_absorbing():
    mdp = chain_mdp([1.0], 0.9, num_actions=3)
    rng = np.random.default_rng(0)
    before = rng.bit_generator.state
    assert sample_step(mdp, 1, 2, rng) == Transition(1, 2, 0.0, 1, True)
    assert rng.bit_generator.state == before


def test_fair_row_frequencies_within_binomial_bounds():
    P = np.zeros((3, 1, 3))
    P[0, 0, 1] = P[0, 0, 2] = 0.5
    P[1, 0, 1] = P[2, 0, 2] = 1.0
    mdp = TabularMdp(P, np.zeros((3, 1)), 0.9, np.array([False, True, True]))
    rng = np.random.default_rng(11)
    n = 100_000
    hits = sum(sample_step(mdp, 0, 0, rng).next_state == 1 for _ in range(n))
    assert abs(hits / n - 0.5) <= 3 * np.sqrt(0.25 / n)


def test_uniform_pairs_single_state():
    mdp = chain_mdp([1.0], 0.9, num_actions=2)
    rng = np.random.default_rng(2)
    draws = [uniform_sa_sampler(mdp, rng) for _ in range(20_000)]
    assert {s for s, _ in draws} == {0}
    assert abs(np.mean([a for _, a in draws]) - 0.5) < 0.02


def test_uniform_pairs_chi_square_and_no_terminals():
    mdp = random_mdp(5, 8, 0.9, np.random.default_rng(4), num_terminal=1)
    rng = np.random.default_rng(5)
    counts = np.zeros((5, 8))
    for _ in range(100_000):
        s, a = uniform_sa_sampler(mdp, rng)
        counts[s, a] += 1
    assert counts[4].sum() == 0
    assert stats.chisquare(counts[:4].ravel()).pvalue > 0.01


def test_outcomes_of_one_match_sample_step():
    mdp = build_gridworld(GridworldSpec(reward_noise_std=0.3))
    a, b = np.random.default_rng(9), np.random.default_rng(9)
    for s in range(5):
        r, n = sample_outcomes(mdp, s, 2, 1, a)
        t = sample_step(mdp, s, 2, b)
        assert (r[0], n[0]) == (t.reward, t.next_state)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**32 - 1), st.integers(0, 1))
def test_random_mdp_rows_normalised(S, A, seed, n_term):
    mdp = random_mdp(S, A, 0.9, np.random.default_rng(seed), num_terminal=n_term)
    assert np.all(np.abs(mdp.transition.sum(axis=2) - 1) <= 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.9), st.integers(0, 3))
def test_gridworld_rows_normalised(slip, seed):
    rng = np.random.default_rng(seed)
    cells = rng.choice(list(".#"), size=(4, 5), p=[0.8, 0.2])
    cells[0, 0], cells[3, 4] = "S", "G"
    mdp = build_gridworld(GridworldSpec("\n".join("".join(r) for r in cells), slip_prob=slip))
    assert np.all(np.abs(mdp.transition.sum(axis=2) - 1) <= 1e-12)
    if slip == 0:
        assert np.all(np.isin(mdp.transition, [0.0, 1.0]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sampling_reproducible(seed):
    mdp = build_gridworld(GridworldSpec(reward_noise_std=0.1))
    run = lambda: [sample_step(mdp, s % 50, s % 8, rng) for rng in [np.random.default_rng(seed)] for s in range(40)]
    assert run() == run()


def test_mdp_arrays_are_read_only():
    mdp = build_gridworld(GridworldSpec())
    with pytest.raises(ValueError):
        mdp.transition[0, 0, 0] = 1.0

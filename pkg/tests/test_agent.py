import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uql.agent import (AgentConfig, Exploration, Init, LearningRate, NumericFault, OnlineConfig, QEnsemble,
                       ReplayBuffer, UQLAgent, load_checkpoint, run_online_phase, run_uniform_update_phase,
                       save_checkpoint, select_action, uql_target, uql_update_batch)
from uql.baselines import make_learner
from uql.mdp import GridworldSpec, Transition, build_gridworld, chain_mdp, random_mdp
from uql.numerics import BetaSolverConfig, solve_beta_rows
from uql.oracle import value_iteration

U2 = np.array([0.5, 0.5])


def agent_for(mdp, seed=0, **overrides):
    cfg = AgentConfig(**overrides)
    return UQLAgent(mdp.num_states, mdp.num_actions, mdp.discount, cfg, np.random.default_rng(seed),
                    terminal=mdp.terminal)


def consume(stream):
    return list(stream)


# -- targets -----------------------------------------------------------------


def test_terminal_target_is_reward():
    assert uql_target([7.0, 9.0], 3.0, True, 1.0, 1.0, 0.9, U2) == 3.0


def test_infinite_kappa_target_is_q_learning():
    assert uql_target([2.0, 5.0], 1.0, False, 0.01, math.inf, 0.9, U2) == pytest.approx(5.5, abs=1e-15)


def test_mellowmax_target_closed_form():
    expected = 1 + 0.99 * math.log((1 + math.e) / 2)
    assert uql_target([0.0, 1.0], 1.0, False, 1.0, 1.0, 0.99, U2) == pytest.approx(expected, abs=1e-14)


# -- updates -----------------------------------------------------------------


def test_unit_step_terminal_update_sets_reward():
    mdp = chain_mdp([2.0], 0.9, num_actions=2)
    agent = agent_for(mdp, ensemble_size=1, learning_rate=LearningRate(value=1.0))
    uql_update_batch(agent, [Transition(0, 0, 2.0, 1, True)])
    assert agent.tables[0, 0, 0] == 2.0


def test_zero_step_leaves_ensemble_unchanged():
    mdp = random_mdp(4, 3, 0.9, np.random.default_rng(0))
    agent = agent_for(mdp, ensemble_size=3, learning_rate=LearningRate(value=0.0),
                      init=Init("uniform", low=-1.0, high=1.0))
    before = agent.tables.copy()
    uql_update_batch(agent, [Transition(1, 2, 5.0, 3, False), Transition(0, 0, -1.0, 2, False)])
    np.testing.assert_array_equal(agent.tables, before)


def test_two_state_chain_converges_to_value_iteration():
    mdp = chain_mdp([1.0], 0.9, num_actions=2)
    truth = value_iteration(mdp)
    agent = agent_for(mdp, ensemble_size=5, kappa=1.0)
    for _ in range(400):
        uql_update_batch(agent, [Transition(0, 0, 1.0, 1, True)])
    np.testing.assert_allclose(agent.tables[:, 0, 0], 1.0, atol=1e-6)
    assert abs(agent.tables[:, 0, 0].mean() - truth.q_star[0, 0]) <= 1e-6


def test_deterministic_chain_reaches_q_star():
    mdp = chain_mdp([0.0, 0.5, 1.0], 0.9, num_actions=2)
    truth = value_iteration(mdp)
    agent = agent_for(mdp, ensemble_size=3, learning_rate=LearningRate(value=0.5),
                      init=Init("uniform", low=0.0, high=2.0))
    consume(run_uniform_update_phase(mdp, agent, 6000, np.random.default_rng(1), record_interval=6000))
    np.testing.assert_allclose(agent.tables, np.broadcast_to(truth.q_star, agent.tables.shape), atol=1e-6)


def test_numeric_fault_raised_on_overflow():
    mdp = chain_mdp([1e308, 1e308], 0.99)
    agent = agent_for(mdp, ensemble_size=1, kappa=math.inf, learning_rate=LearningRate(value=1.0),
                      init=Init(value=1e308))
    with pytest.raises(NumericFault), np.errstate(over="ignore"):
        uql_update_batch(agent, [Transition(0, 0, 1e308, 1, False)])


def test_beta_cache_matches_fresh_solve():
    mdp = build_gridworld(GridworldSpec())
    agent = agent_for(mdp, ensemble_size=6, init=Init("uniform", low=0.0, high=1.0))
    consume(run_uniform_update_phase(mdp, agent, 300, np.random.default_rng(2), record_interval=100,
                                     sharing="state-action"))
    states = np.arange(mdp.num_states)
    fresh = solve_beta_rows(agent.ensemble.targets.transpose(1, 0, 2), agent.prior.weights, BetaSolverConfig())
    np.testing.assert_array_equal(agent.betas(states), fresh)


def test_target_sync_interval_lags_targets():
    mdp = random_mdp(3, 2, 0.9, np.random.default_rng(0))
    agent = agent_for(mdp, ensemble_size=2, target_sync_interval=3)
    batch = [Transition(0, 0, 1.0, 1, False)]
    uql_update_batch(agent, batch)
    assert not np.array_equal(agent.ensemble.targets, agent.ensemble.members)
    uql_update_batch(agent, batch)
    uql_update_batch(agent, batch)
    np.testing.assert_array_equal(agent.ensemble.targets, agent.ensemble.members)


def test_shared_transitions_keep_identical_members_identical():
    mdp = build_gridworld(GridworldSpec())
    agent = agent_for(mdp, ensemble_size=4)
    consume(run_uniform_update_phase(mdp, agent, 500, np.random.default_rng(3), sharing="transition"))
    q = agent.tables
    assert np.all(q == q[0])


def test_state_action_sharing_draws_distinct_outcomes():
    mdp = build_gridworld(GridworldSpec())
    agent = agent_for(mdp, ensemble_size=4)
    consume(run_uniform_update_phase(mdp, agent, 500, np.random.default_rng(3), sharing="state-action"))
    assert not np.all(agent.tables == agent.tables[0])
    # every member saw the same (s, a) pairs
    assert np.all(agent.visits == agent.visits[0])


def test_kappa_inf_single_member_equals_q_learning():
    mdp = build_gridworld(GridworldSpec())
    cfg = AgentConfig(ensemble_size=1, kappa=math.inf, learning_rate=LearningRate(value=0.1),
                      init=Init("uniform", low=0.0, high=1.0))
    tables = []
    for algo in ("uql", "q-learning"):
        learner = make_learner(algo, mdp.num_states, 8, mdp.discount, cfg, np.random.default_rng(4),
                               terminal=mdp.terminal)
        consume(run_uniform_update_phase(mdp, learner, 2000, np.random.default_rng(5), record_interval=1000))
        tables.append(learner.tables.copy())
    assert np.array_equal(tables[0], tables[1])


def test_polynomial_rate_counts_per_pair():
    lr = LearningRate("polynomial", scale=1.0, offset=1.0, power=0.8)
    assert lr(0) == 1.0
    assert lr(3) == pytest.approx(4 ** -0.8)
    with pytest.raises(ValueError):
        LearningRate("polynomial", power=0.4)


# -- exploration -------------------------------------------------------------


def test_full_epsilon_is_uniform():
    q = np.zeros((1, 1, 4))
    q[0, 0, 2] = 10.0
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action(q, 0, Exploration(epsilon=1.0), rng) for _ in range(8000)], minlength=4)
    assert np.all(np.abs(counts / 8000 - 0.25) < 0.02)


def test_ucb_without_bonus_is_mean_greedy():
    q = np.array([[[1.0, 0.0, 3.0]], [[1.0, 4.0, 0.0]]])
    assert select_action(q, 0, Exploration("ucb", ucb_lambda=0.0), np.random.default_rng(0)) == 1


def test_ucb_bonus_prefers_uncertain_action():
    # means [1, 1], population std [0, 2]
    q = np.array([[[1.0, -1.0]], [[1.0, 3.0]]])
    assert select_action(q, 0, Exploration("ucb", ucb_lambda=1.0), np.random.default_rng(0)) == 1


def test_greedy_ties_take_lowest_action():
    q = np.zeros((3, 2, 5))
    assert select_action(q, 1, Exploration(epsilon=0.0), np.random.default_rng(0)) == 0


def test_epsilon_schedule():
    e = Exploration(epsilon=1.0, epsilon_final=0.1, decay_steps=100)
    assert e.epsilon_at(0) == 1.0
    assert e.epsilon_at(50) == pytest.approx(0.55)
    assert e.epsilon_at(1000) == pytest.approx(0.1)


# -- run loops ---------------------------------------------------------------


def test_zero_updates_yield_nothing():
    mdp = build_gridworld(GridworldSpec())
    agent = agent_for(mdp, ensemble_size=2, init=Init("uniform", low=0.0, high=1.0))
    before = agent.tables.copy()
    assert consume(run_uniform_update_phase(mdp, agent, 0, np.random.default_rng(0), [2])) == []
    np.testing.assert_array_equal(agent.tables, before)


def test_record_schedule():
    mdp = chain_mdp([0.0, 1.0], 0.9, num_actions=2)
    agent = agent_for(mdp, ensemble_size=2)
    steps = [r.step for r in run_uniform_update_phase(mdp, agent, 120, np.random.default_rng(0), [0],
                                                       record_interval=50)]
    assert steps == [50, 100, 120]


def test_median_beta_rises_during_training():
    mdp = build_gridworld(GridworldSpec())
    truth = value_iteration(mdp)
    agent = agent_for(mdp, ensemble_size=10, kappa=0.5, init=Init("uniform", low=0.0, high=1.5))
    recs = consume(run_uniform_update_phase(mdp, agent, 4000, np.random.default_rng(6), [2], truth, 50,
                                            sharing="state-action"))
    windows = np.array([r.median_beta for r in recs]).reshape(4, -1).mean(axis=1)
    assert np.all(np.diff(windows) >= 0)


def test_buffer_of_one_trains_on_latest():
    buf = ReplayBuffer(1)
    rng = np.random.default_rng(0)
    for i in range(5):
        t = Transition(i, 0, float(i), i + 1, False)
        buf.add(t)
        assert buf.sample(1, rng) == [t]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_buffer_is_bounded_fifo(capacity, n):
    buf = ReplayBuffer(capacity)
    items = [Transition(i, i % 3, float(i), i + 1, False) for i in range(n)]
    for t in items:
        buf.add(t)
        assert len(buf) <= capacity
    assert buf.ordered() == items[-capacity:] if n else buf.ordered() == []


def test_online_uniform_behaviour_visits_every_pair():
    mdp = build_gridworld(GridworldSpec("S..#\n....\n#..G", slip_prob=0.2))
    visits = np.zeros((mdp.num_states, mdp.num_actions), dtype=np.int64)
    learner = make_learner("q-learning", mdp.num_states, 8, mdp.discount, AgentConfig(ensemble_size=1),
                           np.random.default_rng(0), terminal=mdp.terminal)
    consume(run_online_phase(mdp, learner, OnlineConfig(), Exploration("uniform"), ReplayBuffer(10_000),
                             100_000, np.random.default_rng(1), record_interval=100_000,
                             visit_counts=visits))
    assert np.all(visits[~mdp.terminal] > 0)


def test_online_greedy_return_improves():
    mdp = build_gridworld(GridworldSpec())
    truth = value_iteration(mdp)
    curves = []
    for seed in range(10):
        agent = agent_for(mdp, seed, ensemble_size=5)
        recs = run_online_phase(mdp, agent, OnlineConfig(), Exploration("uniform"), ReplayBuffer(10_000),
                                3000, np.random.default_rng(100 + seed), [2], truth, 250)
        curves.append([r.greedy_return for r in recs])
    mean = np.mean(curves, axis=0)
    smooth = np.convolve(mean, np.ones(3) / 3, mode="valid")
    assert np.all(np.diff(smooth) >= -1e-3)
    assert smooth[-1] > smooth[0] + 0.1


# -- checkpoints -------------------------------------------------------------


@pytest.mark.parametrize("algo", ["uql", "double-q"])
def test_checkpoint_resume_is_bit_exact(tmp_path, algo):
    mdp = build_gridworld(GridworldSpec(reward_noise_std=0.1))
    truth = value_iteration(mdp)
    cfg = AgentConfig(ensemble_size=3, init=Init("uniform", low=0.0, high=1.0),
                      learning_rate=LearningRate("polynomial", power=0.7))

    def learner(seed):
        return make_learner(algo, mdp.num_states, 8, mdp.discount, cfg, np.random.default_rng(seed),
                            terminal=mdp.terminal)

    full = learner(0)
    full_recs = consume(run_uniform_update_phase(mdp, full, 600, np.random.default_rng(1), [2], truth, 100,
                                                 sharing="state-action"))

    part = learner(0)
    rng = np.random.default_rng(1)
    head = consume(run_uniform_update_phase(mdp, part, 300, rng, [2], truth, 100, sharing="state-action"))
    save_checkpoint(tmp_path / "ck.npz", part, 300, rng)

    resumed = learner(99)
    step, rng2 = load_checkpoint(tmp_path / "ck.npz", resumed)
    tail = consume(run_uniform_update_phase(mdp, resumed, 300, rng2, [2], truth, 100, sharing="state-action",
                                            start_step=step))
    assert np.array_equal(resumed.tables, full.tables)
    assert [r.metrics() for r in head + tail] == [r.metrics() for r in full_recs]


def test_checkpoint_rejects_other_learner(tmp_path):
    mdp = chain_mdp([1.0], 0.9)
    a = agent_for(mdp)
    save_checkpoint(tmp_path / "ck.npz", a, 0, np.random.default_rng(0))
    other = make_learner("q-learning", 2, 1, 0.9, AgentConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="uql"):
        load_checkpoint(tmp_path / "ck.npz", other)


def test_ensemble_shape_validation():
    with pytest.raises(ValueError):
        QEnsemble(np.zeros((2, 3)))

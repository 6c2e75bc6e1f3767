"""Tabular unbiased soft Q-learning: ensembles, a solved inverse temperature and exact oracles."""

from .agent import AgentConfig, Exploration, Init, LearningRate, OnlineConfig, UQLAgent
from .baselines import BaselineKind, make_learner
from .experiment import ConfigError, EnvConfig, RunConfig, load_config, run_experiment, sweep
from .mdp import GridworldSpec, TabularMdp, build_gridworld, random_mdp
from .numerics import BetaSolverConfig, PriorPolicy, discrepancy, mellowmax, soft_greedy_policy, solve_beta
from .oracle import GroundTruth, value_iteration

__all__ = [
    "AgentConfig", "BaselineKind", "BetaSolverConfig", "ConfigError", "EnvConfig", "Exploration",
    "GridworldSpec", "GroundTruth", "Init", "LearningRate", "OnlineConfig", "PriorPolicy", "RunConfig",
    "TabularMdp", "UQLAgent", "build_gridworld", "discrepancy", "load_config", "make_learner",
    "mellowmax", "random_mdp", "run_experiment", "soft_greedy_policy", "solve_beta", "sweep",
    "value_iteration",
]

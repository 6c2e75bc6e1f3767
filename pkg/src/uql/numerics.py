"""Stable mellowmax / Boltzmann kernels and the unbiased inverse-temperature solver.

All row-wise kernels take ``values`` of shape ``(..., A)`` and a prior that
broadcasts against it. Temperatures ``w = 0`` and ``w = inf`` are the exact
hardmax and prior-mean limits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

PRIOR_TOL = 1e-12

OPERATORS = ("mellowmax", "softmax-expectation", "hardmax", "prior-mean")
Operator = Literal["mellowmax", "softmax-expectation", "hardmax", "prior-mean"]


class NumericsError(ValueError):
    """Invalid input to a numeric kernel (bad prior, NaN values, ...)."""


@dataclass(frozen=True)
class PriorPolicy:
    """Per-state action prior; every entry strictly positive, rows normalised."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2:
            raise NumericsError("prior weights must have shape (S, A)")
        check_prior(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "PriorPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def __getitem__(self, state):
        return self.weights[state]


@dataclass(frozen=True)
class BetaSolverConfig:
    beta_min: float = 1e-20
    beta_max: float = 2e6
    max_iterations: int = 35
    residual_tol: float = 1e-9

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not math.isfinite(self.beta_max):
            raise ValueError("beta_max must be finite")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.residual_tol <= 0:
            raise ValueError("residual_tol must be positive")


def check_prior(prior: np.ndarray) -> None:
    prior = np.asarray(prior, dtype=float)
    if not np.all(np.isfinite(prior)) or np.any(prior <= 0):
        raise NumericsError("prior entries must be finite and strictly positive")
    if np.any(np.abs(prior.sum(axis=-1) - 1.0) > PRIOR_TOL):
        raise NumericsError("prior rows must sum to 1")


def _check_values(values: np.ndarray) -> None:
    if np.isnan(values).any():
        raise NumericsError("values contain NaN")
    if not np.all(np.isfinite(values)):
        raise NumericsError("values must be finite")


# ---------------------------------------------------------------------------
# Unchecked row kernels
# ---------------------------------------------------------------------------


def mellowmax_rows(values, prior, w):
    """``w * log sum_a prior(a) exp(values(a) / w)`` along the last axis.

    ``w`` broadcasts against ``values[..., 0]``. No input validation.
    """
    values = np.asarray(values, dtype=float)
    prior = np.broadcast_to(np.asarray(prior, dtype=float), values.shape)
    w = np.broadcast_to(np.asarray(w, dtype=float), values.shape[:-1])
    m = values.max(axis=-1)
    out = np.empty(values.shape[:-1])
    hard = w == 0
    flat = np.isinf(w)
    soft = ~(hard | flat)
    out[hard] = m[hard]
    if flat.any():
        p = prior[flat]
        out[flat] = (p * values[flat]).sum(axis=-1) / p.sum(axis=-1)
    if soft.any():
        ws = w[soft]
        x = (values[soft] - m[soft][:, None]) / ws[:, None]
        p = prior[soft]
        total = p.sum(axis=-1)
        # log(sum p e^x) written around 1 so that large w keeps full precision.
        s = (p * np.expm1(x)).sum(axis=-1) / total
        out[soft] = m[soft] + ws * np.log1p(s)
    return out


def boltzmann_rows(values, prior, beta):
    """Policy ``prior(a) exp(beta values(a))`` normalised along the last axis."""
    values = np.asarray(values, dtype=float)
    prior = np.broadcast_to(np.asarray(prior, dtype=float), values.shape)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), values.shape[:-1])
    m = values.max(axis=-1, keepdims=True)
    greedy = np.isinf(beta)
    b = np.where(greedy, 0.0, beta)[..., None]
    logits = np.where(b == 0, 0.0, b * (values - m))
    weights = prior * np.exp(logits)
    top = (values == m) & (prior > 0)
    weights = np.where(greedy[..., None], top.astype(float), weights)
    return weights / weights.sum(axis=-1, keepdims=True)


def softmax_expectation_rows(values, prior, beta):
    values = np.asarray(values, dtype=float)
    return (boltzmann_rows(values, prior, beta) * values).sum(axis=-1)


def discrepancy_rows(ensemble_values, prior, beta):
    """Discrepancy for a batch: ``ensemble_values`` has shape ``(..., K, A)``.

    ``prior`` broadcasts against ``(..., A)`` and ``beta`` against ``(...)``.
    """
    q = np.asarray(ensemble_values, dtype=float)
    beta = np.asarray(beta, dtype=float)
    prior = np.asarray(prior, dtype=float)
    with np.errstate(divide="ignore"):
        w = np.where(beta == 0, np.inf, 1.0 / beta)
    mm = mellowmax_rows(q, prior[..., None, :], w[..., None])
    return mm.mean(axis=-1) - q.mean(axis=-2).max(axis=-1)


def solve_beta_rows(ensemble_values, prior, cfg: BetaSolverConfig) -> np.ndarray:
    """Vectorised log-space bisection for the root of the discrepancy.

    ``ensemble_values`` has shape ``(n, K, A)`` and ``prior`` ``(n, A)`` or ``(A,)``.
    """
    q = np.asarray(ensemble_values, dtype=float)
    n = q.shape[0]
    prior = np.broadcast_to(np.asarray(prior, dtype=float), (n, q.shape[-1]))
    prior = (prior / prior.sum(axis=-1, keepdims=True))[:, None, :]
    m = q.max(axis=-1)
    shifted = q - m[..., None]
    offset = m.mean(axis=-1) - q.mean(axis=-2).max(axis=-1)

    inv_k = 1.0 / q.shape[1]

    def f(p, x, off, beta):
        s = (p * np.expm1(beta[:, None, None] * x)).sum(axis=-1)
        return off + np.log1p(s).sum(axis=-1) * inv_k / beta

    tol = cfg.residual_tol
    result = np.empty(n)
    at_max = f(prior, shifted, offset, np.full(n, cfg.beta_max)) <= tol
    result[at_max] = cfg.beta_max
    idx = np.flatnonzero(~at_max)
    if idx.size:
        at_min = f(prior[idx], shifted[idx], offset[idx], np.full(idx.size, cfg.beta_min)) >= -tol
        result[idx[at_min]] = cfg.beta_min
        idx = idx[~at_min]

    p, x, off = prior[idx], shifted[idx], offset[idx]
    lo = np.full(idx.size, math.log(cfg.beta_min))
    hi = np.full(idx.size, math.log(cfg.beta_max))
    for _ in range(cfg.max_iterations):
        if idx.size == 0:
            break
        mid = 0.5 * (lo + hi)
        beta = np.exp(mid)
        val = f(p, x, off, beta)
        above = val > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        hit = np.abs(val) <= tol
        if hit.any():
            result[idx[hit]] = beta[hit]
            keep = ~hit
            idx, p, x, off, lo, hi = idx[keep], p[keep], x[keep], off[keep], lo[keep], hi[keep]
    if idx.size:
        result[idx] = np.exp(0.5 * (lo + hi))
    return result


# ---------------------------------------------------------------------------
# Checked public API
# ---------------------------------------------------------------------------


def mellowmax(values, prior, w: float) -> float:
    """Mellowmax of one action-value vector at temperature ``w`` in ``[0, inf]``."""
    values = np.asarray(values, dtype=float)
    prior = np.asarray(prior, dtype=float)
    _check_values(values)
    check_prior(prior)
    if np.isnan(w) or w < 0:
        raise NumericsError(f"temperature must be in [0, inf], got {w}")
    return float(mellowmax_rows(values, prior, w))


def soft_greedy_policy(values, prior, beta: float) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    prior = np.asarray(prior, dtype=float)
    _check_values(values)
    check_prior(prior)
    if np.isnan(beta) or beta < 0:
        raise NumericsError(f"inverse temperature must be in [0, inf], got {beta}")
    return boltzmann_rows(values, prior, beta)


def discrepancy(ensemble_values, prior, beta: float) -> float:
    """Ensemble-mean soft value at ``1/beta`` minus the max of the ensemble mean.

    Nondecreasing in ``beta``; its root is the unbiased inverse temperature.
    """
    q = np.atleast_2d(np.asarray(ensemble_values, dtype=float))
    prior = np.asarray(prior, dtype=float)
    _check_values(q)
    check_prior(prior)
    if np.isnan(beta) or beta < 0:
        raise NumericsError(f"inverse temperature must be in [0, inf], got {beta}")
    return float(discrepancy_rows(q, prior, beta))


def solve_beta(ensemble_values, prior, cfg: BetaSolverConfig = BetaSolverConfig()) -> float:
    """Root of the discrepancy over ``[beta_min, beta_max]`` by log-space bisection.

    Members that (nearly) agree give ``beta_max``; full disagreement with a flat
    ensemble mean gives ``beta_min``.
    """
    q = np.atleast_2d(np.asarray(ensemble_values, dtype=float))
    prior = np.asarray(prior, dtype=float)
    _check_values(q)
    check_prior(prior)
    return float(solve_beta_rows(q[None], prior[None], cfg)[0])


def reduce_rows(values, prior, beta, kappa: float, operator: str):
    """Next-state value for a batch of rows with per-row ``beta``.

    The effective inverse temperature is ``kappa * beta``; ``kappa = inf`` is
    hardmax whatever the operator.
    """
    values = np.asarray(values, dtype=float)
    if operator not in OPERATORS:
        raise NumericsError(f"unknown operator {operator!r}; expected one of {OPERATORS}")
    if math.isinf(kappa) or operator == "hardmax":
        return values.max(axis=-1)
    prior = np.asarray(prior, dtype=float)
    if operator == "prior-mean":
        p = np.broadcast_to(prior, values.shape)
        return (p * values).sum(axis=-1) / p.sum(axis=-1)
    eff = kappa * np.asarray(beta, dtype=float)
    if operator == "softmax-expectation":
        return softmax_expectation_rows(values, prior, eff)
    with np.errstate(divide="ignore"):
        w = np.where(eff == 0, np.inf, 1.0 / eff)
    return mellowmax_rows(values, prior, w)


def reduce_next_state(values, prior, beta: float, kappa: float, operator: str = "mellowmax") -> float:
    values = np.asarray(values, dtype=float)
    _check_values(values)
    check_prior(prior)
    if not kappa > 0:
        raise NumericsError(f"kappa must be positive, got {kappa}")
    return float(reduce_rows(values, prior, beta, kappa, operator))

"""
Fitted Q-iteration on pooled transitions.

Each round builds Bellman targets R + gamma * max_a' Q_{k-1}(x', a') and fits
a new Q by supervised regression. Two schedules are supported: ``batched``
consumes K disjoint splits of the data in index order (one per round), and
``full`` refits on every row each round with the previous fit frozen as the
target.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import DivergenceError, DomainError, ShapeError
from .policies import one_hot
from .regression import (
    DEFAULT_RIDGE, FeatureMap, LinearModel, TrainingConfig, fit_linear_least_squares,
    fit_mlp_regressor, model_from_dict, model_to_dict,
)

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-12


class FqiMode(str, Enum):
    BATCHED = "batched"
    FULL = "full"


class ConvergenceNorm(str, Enum):
    MAX_ABS = "max-abs"
    SUM_ABS = "sum-abs"

    def __call__(self, delta):
        delta = np.abs(np.asarray(delta, dtype=float))
        return float(delta.max() if self is ConvergenceNorm.MAX_ABS else delta.sum())


@dataclass(frozen=True)
class FqiConfig:
    iterations: int = 50
    mode: FqiMode = FqiMode.FULL
    convergence_tol: float = 1e-5
    convergence_norm: ConvergenceNorm = ConvergenceNorm.MAX_ABS
    backend: str = "linear"
    degree: int = 2
    include_bias: bool = True
    ridge: float = DEFAULT_RIDGE
    gamma: float = 0.9
    mlp: TrainingConfig = field(default_factory=TrainingConfig)
    target_update_epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", FqiMode(self.mode))
        object.__setattr__(self, "convergence_norm", ConvergenceNorm(self.convergence_norm))
        if self.iterations < 1:
            raise DomainError("FQI needs at least one iteration")
        if not self.convergence_tol > 0:
            raise DomainError("convergence tolerance must be positive")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"discount must lie in [0, 1), got {self.gamma}")
        if self.backend not in ("linear", "mlp"):
            raise DomainError(f"unknown FQI backend {self.backend!r}")
        if self.target_update_epochs < 1:
            raise DomainError("target_update_epochs must be at least 1")

    @property
    def rounds(self):
        if self.backend == "mlp":
            return max(1, math.ceil(self.mlp.epochs / self.target_update_epochs))
        return self.iterations


@dataclass(frozen=True)
class QFunction:
    backend: object
    n_actions: int
    gamma: float
    iterations_run: int = field(default=0, compare=False)
    history: tuple = field(default=(), compare=False)

    def values(self, states):
        """(m, n_actions) action values."""
        values = np.asarray(self.backend.action_values(states), dtype=float)
        return values.reshape(-1, self.n_actions)

    def value(self, states, actions):
        return self.backend.predict(states, actions)

    def parameter_vector(self):
        return self.backend.parameter_vector()

    @property
    def state_dim(self):
        if isinstance(self.backend, LinearModel):
            return self.backend.feature_map.state_dim
        return self.backend.n_inputs

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "n_actions": self.n_actions,
            "iterations_run": self.iterations_run,
            "backend": model_to_dict(self.backend),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            backend=model_from_dict(payload["backend"]),
            n_actions=int(payload["n_actions"]),
            gamma=float(payload["gamma"]),
            iterations_run=int(payload.get("iterations_run", 0)),
        )


def bellman_targets(batch, q_prev):
    """R_i + gamma * max_a' q_prev(X'_i, a'); ``q_prev=None`` stands for Q_0 = 0."""
    if q_prev is None:
        return np.array(batch.utility, dtype=float)
    next_values = q_prev.values(batch.next_state).max(axis=1)
    return batch.utility + q_prev.gamma * next_values


def _check_finite(q, batch, iteration):
    if not np.all(np.isfinite(q.parameter_vector())) or not np.all(np.isfinite(q.values(batch.next_state))):
        raise DivergenceError(f"Q-function became non-finite at iteration {iteration}", iteration=iteration)


def _splits(n, rounds, mode):
    if mode is FqiMode.FULL:
        return [np.arange(n)] * rounds
    if n < rounds:
        raise ShapeError(f"batched FQI needs at least {rounds} transitions, got {n}")
    return np.array_split(np.arange(n), rounds)


def fqi_train(batch, config=None, callback=None):
    """
    Run fitted Q-iteration and return the final Q-function.

    Stops early once the parameter change between consecutive fits falls
    below ``config.convergence_tol``. ``callback(k, q_k)`` is called after
    every round.
    """
    config = config or FqiConfig()
    if len(batch) == 0:
        raise ShapeError("cannot run FQI on an empty batch")
    splits = _splits(len(batch), config.rounds, config.mode)
    if config.backend == "mlp":
        return _train_mlp(batch, config, splits, callback)
    return _train_linear(batch, config, splits, callback)


def _train_linear(batch, config, splits, callback):
    feature_map = FeatureMap(batch.state_dim, batch.n_actions, config.degree, config.include_bias)
    design = feature_map.transform(batch.state, batch.action)

    q = None
    previous = np.zeros(feature_map.output_dim)
    history = []
    for k, rows in enumerate(splits, start=1):
        part = batch.take(rows) if config.mode is FqiMode.BATCHED else batch
        targets = bellman_targets(part, q)
        weights = fit_linear_least_squares(design[rows], targets, ridge=config.ridge)
        change = config.convergence_norm(weights - previous)
        history.append(change)
        q = QFunction(
            backend=LinearModel(weights=weights, feature_map=feature_map, ridge=config.ridge),
            n_actions=batch.n_actions, gamma=config.gamma, iterations_run=k, history=tuple(history),
        )
        _check_finite(q, batch, k)
        if callback is not None:
            callback(k, q)
        logger.debug("fqi[linear] iteration %d: parameter change %.3e", k, change)
        if change < config.convergence_tol:
            logger.info("FQI converged after %d iterations (change %.2e)", k, change)
            break
        previous = weights
    return q


def _train_mlp(batch, config, splits, callback):
    network = None
    target = None
    history = []
    remaining = config.mlp.epochs
    for k, rows in enumerate(splits, start=1):
        part = batch.take(rows) if config.mode is FqiMode.BATCHED else batch
        targets = bellman_targets(part, target)
        epochs = min(config.target_update_epochs, remaining) if config.mode is FqiMode.FULL else config.target_update_epochs
        remaining -= epochs
        network = fit_mlp_regressor(
            part.state, targets,
            config=replace(config.mlp, epochs=epochs, seed=config.seed + k),
            actions=part.action, n_outputs=batch.n_actions, init=network,
        )
        q = QFunction(backend=network, n_actions=batch.n_actions, gamma=config.gamma, iterations_run=k)
        _check_finite(q, batch, k)

        change = math.inf if target is None else config.convergence_norm(
            network.parameter_vector() - target.parameter_vector()
        )
        history.append(change)
        q = replace(q, history=tuple(history))
        if callback is not None:
            callback(k, q)
        logger.debug("fqi[mlp] refresh %d: %d epochs, parameter change %.3e", k, epochs, change)
        target = q
        if change < config.convergence_tol:
            logger.info("FQI converged after %d target refreshes (change %.2e)", k, change)
            break
    return target


def greedy_actions(values, reference=0):
    """Row-wise argmax; ties within TIE_TOLERANCE go to ``reference``, then to the lowest index."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    ties = values >= values.max(axis=1, keepdims=True) - TIE_TOLERANCE
    lowest = ties.argmax(axis=1)
    return np.where(ties[:, reference], reference, lowest).astype(np.int64)


def greedy_action(q, x, reference=0):
    return int(greedy_actions(q.values(x), reference)[0])


@dataclass(frozen=True)
class GreedyPolicy:
    q: QFunction
    reference: int = 0
    is_deterministic = True

    @property
    def n_actions(self):
        return self.q.n_actions

    def act(self, states):
        return greedy_actions(self.q.values(states), self.reference)

    def action_probabilities(self, states):
        return one_hot(self.act(states), self.n_actions)

    def to_dict(self):
        return {"type": "greedy", "reference": self.reference, "q": self.q.to_dict()}

    @classmethod
    def from_dict(cls, payload):
        return cls(q=QFunction.from_dict(payload["q"]), reference=int(payload.get("reference", 0)))


@dataclass(frozen=True)
class ActionGapSummary:
    gaps: np.ndarray
    quantiles: dict
    margin_fractions: dict

    @property
    def zero_gap_fraction(self):
        return float(np.mean(self.gaps == 0))


DEFAULT_GAP_THRESHOLDS = (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


def empirical_action_gap(q, states, thresholds=DEFAULT_GAP_THRESHOLDS):
    """
    Per-state gap between the best and second-best action value, with the
    fraction of states whose gap is in (0, t] for each threshold t.
    """
    if q.n_actions < 2:
        raise ShapeError("action gaps need at least two actions")
    values = q.values(states)
    if values.shape[0] < 1:
        raise ShapeError("need at least one state")
    top_two = np.sort(values, axis=1)[:, -2:]
    gaps = top_two[:, 1] - top_two[:, 0]
    quantiles = {level: float(np.quantile(gaps, level)) for level in (0.05, 0.25, 0.5, 0.75, 0.95)}
    margins = {float(t): float(np.mean((gaps > 0) & (gaps <= t))) for t in thresholds}
    return ActionGapSummary(gaps=gaps, quantiles=quantiles, margin_fractions=margins)

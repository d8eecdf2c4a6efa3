"""
Policies map states to actions (deterministic) or to action distributions
(stochastic). Every policy exposes ``action_probabilities``; deterministic
policies also expose ``act``.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import SerializationError, ShapeError


def _n_rows(states):
    states = np.asarray(states, dtype=float)
    return 1 if states.ndim == 0 else states.shape[0]


def _first_column(states):
    states = np.asarray(states, dtype=float)
    if states.ndim == 0:
        return states.reshape(1)
    return states if states.ndim == 1 else states[:, 0]


def one_hot(actions, n_actions):
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    out = np.zeros((actions.shape[0], n_actions))
    out[np.arange(actions.shape[0]), actions] = 1.0
    return out


@dataclass(frozen=True)
class ConstantPolicy:
    """Always the same action; the fixed reference action a' is one of these."""
    action: int
    n_actions: int = 2
    is_deterministic = True

    def __post_init__(self):
        if not 0 <= self.action < self.n_actions:
            raise ShapeError(f"action {self.action} outside [0, {self.n_actions})")

    def act(self, states):
        return np.full(_n_rows(states), self.action, dtype=np.int64)

    def action_probabilities(self, states):
        return one_hot(self.act(states), self.n_actions)


@dataclass(frozen=True)
class LogisticBehaviorPolicy:
    """Binary logging policy with P(A=1 | x) = logistic(intercept + slope * x[0])."""
    slope: float = 0.5
    intercept: float = 0.0
    n_actions = 2
    is_deterministic = False

    def prob_treat(self, states):
        return expit(self.intercept + self.slope * _first_column(states))

    def action_probabilities(self, states):
        p1 = self.prob_treat(states)
        return np.column_stack([1.0 - p1, p1])


@dataclass(frozen=True)
class UniformRandomPolicy:
    n_actions: int = 2
    is_deterministic = False

    def action_probabilities(self, states):
        return np.full((_n_rows(states), self.n_actions), 1.0 / self.n_actions)


@dataclass(frozen=True)
class FrequencyPolicy:
    """State-independent action distribution (e.g. empirical logged frequencies)."""
    probabilities: tuple
    is_deterministic = False

    @property
    def n_actions(self):
        return len(self.probabilities)

    def action_probabilities(self, states):
        return np.tile(np.asarray(self.probabilities, dtype=float), (_n_rows(states), 1))


def draw_actions(policy, states, uniforms):
    """
    Actions for a batch of states. Stochastic policies sample by inverse CDF
    from the supplied uniforms so each trajectory stream stays reproducible.
    """
    if policy.is_deterministic:
        return np.asarray(policy.act(states), dtype=np.int64)
    probs = policy.action_probabilities(states)
    cumulative = np.cumsum(probs, axis=1)
    uniforms = np.asarray(uniforms, dtype=float).reshape(-1, 1)
    actions = (uniforms >= cumulative).sum(axis=1)
    return np.minimum(actions, probs.shape[1] - 1).astype(np.int64)


def policy_to_dict(policy):
    if isinstance(policy, ConstantPolicy):
        return {"type": "constant", "action": policy.action, "n_actions": policy.n_actions}
    if isinstance(policy, LogisticBehaviorPolicy):
        return {"type": "logistic-behavior", "slope": policy.slope, "intercept": policy.intercept}
    if isinstance(policy, UniformRandomPolicy):
        return {"type": "uniform-random", "n_actions": policy.n_actions}
    if isinstance(policy, FrequencyPolicy):
        return {"type": "frequency", "probabilities": list(policy.probabilities)}
    if hasattr(policy, "to_dict"):
        return policy.to_dict()
    raise SerializationError(f"cannot serialise policy {type(policy).__name__}")


def policy_from_dict(payload):
    kind = payload.get("type")
    if kind == "constant":
        return ConstantPolicy(action=int(payload["action"]), n_actions=int(payload.get("n_actions", 2)))
    if kind == "logistic-behavior":
        return LogisticBehaviorPolicy(slope=float(payload["slope"]), intercept=float(payload.get("intercept", 0.0)))
    if kind == "uniform-random":
        return UniformRandomPolicy(n_actions=int(payload["n_actions"]))
    if kind == "frequency":
        return FrequencyPolicy(probabilities=tuple(float(p) for p in payload["probabilities"]))
    if kind == "greedy":
        from .fqi import GreedyPolicy
        return GreedyPolicy.from_dict(payload)
    raise SerializationError(f"unknown policy type {kind!r}")

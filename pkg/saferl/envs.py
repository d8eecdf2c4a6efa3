"""
Simulated environments with full counterfactual bookkeeping.

Both environments have a scalar state and a binary action. Every step records
both potential outcomes Y(0) and Y(1), which share one noise draw, so the
ordering of the potential outcomes is fixed by the state (rank preservation).

Randomness is organised in streams: each simulated individual owns a
generator seeded from ``SeedSequence([seed, purpose, stream_id])`` with
``stream_id = replication * N + individual``. A stream pre-draws its initial
state, transition noise, outcome noise and action uniforms, so every policy
evaluated on the same streams sees the same noise (common random numbers).
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum, IntEnum

import numpy as np
import pandas as pd

from .data import TrajectoryDataset
from .exceptions import DomainError, ShapeError
from .policies import LogisticBehaviorPolicy, draw_actions

logger = logging.getLogger(__name__)

DEFAULT_GAMMA = 0.9
N_ACTIONS = 2


class EnvKind(str, Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class NoiseScale(str, Enum):
    VARIANCE = "variance"
    SD = "sd"


class StreamPurpose(IntEnum):
    TRAINING = 0
    EVALUATION = 1


# (transition, outcome) noise, read as variances by default
DEFAULT_NOISE = {
    EnvKind.LINEAR: (0.1, 0.05),
    EnvKind.NONLINEAR: (0.1, 0.1),
}


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind = EnvKind.LINEAR
    transition_noise: float = None
    outcome_noise: float = None
    noise_scale: NoiseScale = NoiseScale.VARIANCE
    initial_mean: float = 0.0
    initial_sd: float = 1.0
    horizon: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        object.__setattr__(self, "noise_scale", NoiseScale(self.noise_scale))
        transition, outcome = DEFAULT_NOISE[self.kind]
        if self.transition_noise is None:
            object.__setattr__(self, "transition_noise", transition)
        if self.outcome_noise is None:
            object.__setattr__(self, "outcome_noise", outcome)
        if not self.transition_noise > 0 or not self.outcome_noise > 0:
            raise DomainError("noise scales must be positive")
        if self.initial_sd < 0:
            raise DomainError("initial_sd must be nonnegative")
        if self.horizon < 1:
            raise DomainError(f"horizon must be at least 1, got {self.horizon}")

    def _sd(self, value):
        return math.sqrt(value) if self.noise_scale is NoiseScale.VARIANCE else value

    @property
    def transition_sd(self):
        return self._sd(self.transition_noise)

    @property
    def outcome_sd(self):
        return self._sd(self.outcome_noise)


# --- dynamics ---

def _linear_transition(x, a):
    return 0.8 * x - 0.2 + 0.3 * a


def _linear_outcome(x, a):
    return 0.3 + 0.4 * x - 0.6 * a * x


def _nonlinear_transition(x, a):
    return np.tanh(0.7 * x + 0.5 * a - 0.25) + 0.25 * np.sin(1.3 * x + 0.5 * a)


def _nonlinear_outcome(x, a):
    return (
        0.3 + 0.25 * np.sin(x + 0.4 * a) + 0.15 * (x + 0.3 * a) ** 2
        + 0.2 * a * np.cos(1.5 * x) - 0.3 * a
    )


_DYNAMICS = {
    EnvKind.LINEAR: (_linear_transition, _linear_outcome),
    EnvKind.NONLINEAR: (_nonlinear_transition, _nonlinear_outcome),
}


def _advance(kind, x, a, omega, nu):
    transition, outcome = _DYNAMICS[kind]
    return transition(x, a) + omega, outcome(x, 0) + nu, outcome(x, 1) + nu


def _step(kind, x, a, rng, spec):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    shape = np.broadcast(x, a).shape
    if rng is None:
        omega = nu = np.zeros(shape)
    else:
        spec = spec or EnvSpec(kind=kind)
        omega = rng.normal(0.0, spec.transition_sd, size=shape)
        nu = rng.normal(0.0, spec.outcome_sd, size=shape)
    next_x, y0, y1 = _advance(kind, x, a, omega, nu)
    if not shape:
        return float(next_x), float(y0), float(y1)
    return next_x, y0, y1


def linear_step(x, a, rng=None, spec=None):
    """
    One step of the linear environment, vectorised over ``x`` and ``a``.

    Returns ``(next_x, y0, y1)``; y0 and y1 share one outcome noise draw.
    ``rng=None`` zeroes both noises.
    """
    return _step(EnvKind.LINEAR, x, a, rng, spec)


def nonlinear_step(x, a, rng=None, spec=None):
    return _step(EnvKind.NONLINEAR, x, a, rng, spec)


def behavior_action(x, rng, policy=None):
    """Draw A ~ pi_b(. | x); scalar in, int out."""
    policy = policy or LogisticBehaviorPolicy()
    x = np.asarray(x, dtype=float)
    actions = draw_actions(policy, x.reshape(-1, 1), rng.random(x.size))
    return int(actions[0]) if x.ndim == 0 else actions.reshape(x.shape)


# --- streams and rollouts ---

def stream_generator(seed, purpose, stream_id):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(purpose), int(stream_id)]))


@dataclass(frozen=True)
class NoiseDraws:
    x0: np.ndarray
    omega: np.ndarray
    nu: np.ndarray
    uniforms: np.ndarray


def draw_noise(spec, n_individuals, steps, purpose, replication=0):
    x0 = np.empty(n_individuals)
    omega = np.empty((n_individuals, steps))
    nu = np.empty((n_individuals, steps))
    uniforms = np.empty((n_individuals, steps))
    first = replication * n_individuals
    for i in range(n_individuals):
        rng = stream_generator(spec.seed, purpose, first + i)
        x0[i] = rng.normal(spec.initial_mean, spec.initial_sd)
        omega[i] = rng.normal(0.0, spec.transition_sd, steps)
        nu[i] = rng.normal(0.0, spec.outcome_sd, steps)
        uniforms[i] = rng.random(steps)
    return NoiseDraws(x0=x0, omega=omega, nu=nu, uniforms=uniforms)


@dataclass(frozen=True)
class CounterfactualStep:
    x: float
    a: int
    y0: float
    y1: float

    @property
    def y(self):
        return self.y1 if self.a == 1 else self.y0


@dataclass(frozen=True)
class Rollout:
    states: np.ndarray   # (N, steps + 1)
    actions: np.ndarray  # (N, steps)
    y0: np.ndarray       # (N, steps)
    y1: np.ndarray       # (N, steps)

    @property
    def n_individuals(self):
        return self.actions.shape[0]

    @property
    def steps(self):
        return self.actions.shape[1]

    @property
    def outcomes(self):
        return np.where(self.actions == 1, self.y1, self.y0)

    def step(self, i, t):
        return CounterfactualStep(
            x=float(self.states[i, t]), a=int(self.actions[i, t]),
            y0=float(self.y0[i, t]), y1=float(self.y1[i, t]),
        )


def rollout_policy(spec, policy, n_individuals, steps=None, purpose=StreamPurpose.EVALUATION, replication=0):
    if n_individuals < 1:
        raise ShapeError("need at least one individual")
    if policy.n_actions != 2:
        raise ShapeError(f"simulated environments have two actions, policy has {policy.n_actions}")
    steps = spec.horizon if steps is None else steps
    noise = draw_noise(spec, n_individuals, steps, purpose, replication)

    states = np.empty((n_individuals, steps + 1))
    actions = np.empty((n_individuals, steps), dtype=np.int64)
    y0 = np.empty((n_individuals, steps))
    y1 = np.empty((n_individuals, steps))
    states[:, 0] = noise.x0
    for t in range(steps):
        x = states[:, t]
        actions[:, t] = draw_actions(policy, x[:, None], noise.uniforms[:, t])
        states[:, t + 1], y0[:, t], y1[:, t] = _advance(spec.kind, x, actions[:, t], noise.omega[:, t], noise.nu[:, t])
    return Rollout(states=states, actions=actions, y0=y0, y1=y1)


def concatenate_rollouts(*rollouts):
    if len({r.steps for r in rollouts}) != 1:
        raise ShapeError("rollouts must share the number of steps")
    return Rollout(
        states=np.concatenate([r.states for r in rollouts]),
        actions=np.concatenate([r.actions for r in rollouts]),
        y0=np.concatenate([r.y0 for r in rollouts]),
        y1=np.concatenate([r.y1 for r in rollouts]),
    )


@dataclass(frozen=True)
class PolicyEvaluation:
    discounted_outcome: float
    discounted_outcome_per_step: float
    average_harm: float
    average_harm_indicator: float
    n_individuals: int

    def as_dict(self):
        return {
            "disc_outcome": self.discounted_outcome,
            "disc_outcome_per_step": self.discounted_outcome_per_step,
            "avg_harm": self.average_harm,
            "avg_harm_indicator_variant": self.average_harm_indicator,
        }


def score_rollout(rollout, gamma=DEFAULT_GAMMA, reference=0):
    """
    Discounted outcome is the per-trajectory discounted sum averaged over
    individuals. Average harm is (Y(0) - Y(1))^+ averaged over all steps; the
    indicator variant is (Y(reference) - Y(pi(X)))^+, which vanishes whenever
    the policy takes the reference action.
    """
    outcomes = rollout.outcomes
    discount = gamma ** np.arange(rollout.steps)
    discounted = float((outcomes * discount).sum(axis=1).mean())
    reference_outcome = rollout.y1 if reference == 1 else rollout.y0
    return PolicyEvaluation(
        discounted_outcome=discounted,
        discounted_outcome_per_step=discounted / rollout.steps,
        average_harm=float(np.maximum(rollout.y0 - rollout.y1, 0.0).mean()),
        average_harm_indicator=float(np.maximum(reference_outcome - outcomes, 0.0).mean()),
        n_individuals=rollout.n_individuals,
    )


def evaluate_policy(spec, policy, n_individuals, horizon=None, gamma=DEFAULT_GAMMA, replication=0, reference=0):
    rollout = rollout_policy(spec, policy, n_individuals, horizon, StreamPurpose.EVALUATION, replication)
    return score_rollout(rollout, gamma, reference)


# --- logged data ---

@dataclass(frozen=True)
class CounterfactualTable:
    """Both potential outcomes for every logged step; kept away from learners."""
    y0: np.ndarray  # (N, T+1)
    y1: np.ndarray  # (N, T+1)

    def to_frame(self, individual_ids=None):
        n, steps = self.y0.shape
        ids = np.arange(n) if individual_ids is None else np.asarray(individual_ids)
        return pd.DataFrame({
            "id": np.repeat(ids, steps),
            "t": np.tile(np.arange(steps), n),
            "y0": self.y0.reshape(-1),
            "y1": self.y1.reshape(-1),
        })


def generate_dataset(spec, n_individuals, policy=None, replication=0):
    """
    Log N trajectories of T+1 steps under the behaviour policy.

    Returns the learner-visible ``TrajectoryDataset`` and the hidden
    ``CounterfactualTable``.
    """
    policy = policy or LogisticBehaviorPolicy()
    rollout = rollout_policy(
        spec, policy, n_individuals, spec.horizon + 1, StreamPurpose.TRAINING, replication,
    )
    data = TrajectoryDataset(
        states=rollout.states[:, :-1, None],
        actions=rollout.actions,
        outcomes=rollout.outcomes,
        n_actions=N_ACTIONS,
    )
    logger.debug("generated %s dataset: N=%d T=%d seed=%d replication=%d",
                 spec.kind.value, n_individuals, spec.horizon, spec.seed, replication)
    return data, CounterfactualTable(y0=rollout.y0, y1=rollout.y1)

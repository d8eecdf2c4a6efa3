"""
Off-policy evaluation on logged data with step-wise weighted importance
sampling.

Every logged step (i, t) carries the ratio pi(A | X) / pi_b(A | X); for a
deterministic target pi(A | X) is the indicator 1{A = pi(X)}. Estimates are
the self-normalised weighted means of a per-step signal, pooled over
individuals and time, without discounting.
"""
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import softmax
from sklearn.linear_model import LogisticRegression

from .exceptions import CoverageError, DomainError, NoOverlapError, SerializationError, ShapeError
from .harm import PenaltyKind

logger = logging.getLogger(__name__)

DEFAULT_PROBABILITY_FLOOR = 1e-3
MULTINOMIAL_PENALTY = 1e-6
MULTINOMIAL_MAX_ITER = 5000


class BehaviorKind(str, Enum):
    EMPIRICAL = "empirical"
    MULTINOMIAL = "multinomial"


def _design(states):
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    return np.column_stack([np.ones(states.shape[0]), states])


@dataclass(frozen=True)
class BehaviorModel:
    """
    Estimated logging policy pi_b.

    Raw probabilities p are floored by mixing with the uniform mass:
    ``floor + (1 - K * floor) * p``, which keeps every action at or above
    the floor while the row still sums to one.
    """
    kind: BehaviorKind
    n_actions: int
    frequencies: tuple = ()
    coefficients: np.ndarray = None  # (n_actions, p + 1), row 0 fixed at zero
    probability_floor: float = DEFAULT_PROBABILITY_FLOOR
    is_deterministic = False

    def __post_init__(self):
        object.__setattr__(self, "kind", BehaviorKind(self.kind))
        if not 0 < self.probability_floor * self.n_actions < 1:
            raise DomainError(f"probability floor {self.probability_floor} is invalid for {self.n_actions} actions")
        if self.kind is BehaviorKind.EMPIRICAL and len(self.frequencies) != self.n_actions:
            raise ShapeError("empirical behaviour model needs one frequency per action")
        if self.kind is BehaviorKind.MULTINOMIAL:
            if self.coefficients is None:
                raise ShapeError("multinomial behaviour model needs coefficients")
            coefficients = np.array(self.coefficients, dtype=float)
            if coefficients.ndim != 2 or coefficients.shape[0] != self.n_actions:
                raise ShapeError("coefficients must be n_actions x (p + 1)")
            coefficients.setflags(write=False)
            object.__setattr__(self, "coefficients", coefficients)

    def raw_probabilities(self, states):
        states = np.asarray(states, dtype=float)
        n = 1 if states.ndim == 0 else states.shape[0]
        if self.kind is BehaviorKind.EMPIRICAL:
            return np.tile(np.asarray(self.frequencies, dtype=float), (n, 1))
        return softmax(_design(states.reshape(n, -1)) @ self.coefficients.T, axis=1)

    def action_probabilities(self, states):
        raw = self.raw_probabilities(states)
        return self.probability_floor + (1.0 - self.n_actions * self.probability_floor) * raw

    def prob_of(self, states, actions):
        probs = self.action_probabilities(states)
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)
        return probs[np.arange(probs.shape[0]), actions]

    def to_dict(self):
        payload = {"kind": self.kind.value, "n_actions": self.n_actions, "probability_floor": self.probability_floor}
        if self.kind is BehaviorKind.EMPIRICAL:
            payload["frequencies"] = list(self.frequencies)
        else:
            payload["coefficients"] = self.coefficients.tolist()
        return payload

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(
                kind=payload["kind"],
                n_actions=int(payload["n_actions"]),
                frequencies=tuple(payload.get("frequencies", ())),
                coefficients=payload.get("coefficients"),
                probability_floor=float(payload.get("probability_floor", DEFAULT_PROBABILITY_FLOOR)),
            )
        except KeyError as exc:
            raise SerializationError(f"behaviour model document is missing {exc}") from exc


def _fit_multinomial(states, actions, n_actions):
    """Softmax logging model, reparametrised so that action 0 has zero coefficients."""
    states = np.asarray(states, dtype=float)
    model = LogisticRegression(C=1.0 / (MULTINOMIAL_PENALTY * len(actions)), max_iter=MULTINOMIAL_MAX_ITER)
    model.fit(states, actions)
    if np.max(model.n_iter_) >= MULTINOMIAL_MAX_ITER:
        logger.warning("multinomial behaviour fit did not converge in %d iterations", MULTINOMIAL_MAX_ITER)
    weights = np.column_stack([model.intercept_, model.coef_])
    if n_actions == 2:
        # binary fits carry a single logit row for action 1
        return np.vstack([np.zeros_like(weights[0]), weights[0]])
    return weights - weights[0]


def estimate_behavior_policy(data, kind=BehaviorKind.EMPIRICAL, probability_floor=DEFAULT_PROBABILITY_FLOOR):
    kind = BehaviorKind(kind)
    actions = data.flat_actions()
    counts = np.bincount(actions, minlength=data.n_actions)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise CoverageError(f"action(s) {missing.tolist()} never occur in the logged data")

    if kind is BehaviorKind.EMPIRICAL:
        frequencies = tuple(float(c) for c in counts / counts.sum())
        logger.info("empirical behaviour frequencies: %s", frequencies)
        return BehaviorModel(kind=kind, n_actions=data.n_actions, frequencies=frequencies,
                             probability_floor=probability_floor)

    coefficients = _fit_multinomial(data.flat_states(), actions, data.n_actions)
    logger.info("multinomial behaviour coefficients: %s", np.round(coefficients, 4).tolist())
    return BehaviorModel(kind=kind, n_actions=data.n_actions, coefficients=coefficients,
                         probability_floor=probability_floor)


def target_weights(policy, states, actions):
    """pi(A | X) for the logged actions; 1{A = pi(X)} for deterministic targets."""
    actions = np.asarray(actions, dtype=np.int64).reshape(-1)
    if policy.is_deterministic:
        return (np.asarray(policy.act(states)) == actions).astype(float)
    probs = policy.action_probabilities(states)
    return probs[np.arange(probs.shape[0]), actions]


def normalized_weights(target_weight, behavior_prob):
    """w / sum(w) with w = target_weight / behavior_prob."""
    weights = np.asarray(target_weight, dtype=float).reshape(-1) / np.asarray(behavior_prob, dtype=float).reshape(-1)
    total = weights.sum()
    if not total > 0:
        raise NoOverlapError("the target policy matches no logged transition")
    return weights / total


def weighted_importance_sampling(signal, target_weight, behavior_prob):
    """sum(w * signal) / sum(w) with w = target_weight / behavior_prob."""
    signal = np.asarray(signal, dtype=float).reshape(-1)
    return float(normalized_weights(target_weight, behavior_prob) @ signal)


def _check_policy(data, policy):
    if policy.n_actions != data.n_actions:
        raise ShapeError(f"policy has {policy.n_actions} actions, data has {data.n_actions}")


def wis_outcome(data, policy, behavior):
    _check_policy(data, policy)
    states, actions = data.flat_states(), data.flat_actions()
    return weighted_importance_sampling(
        data.flat_outcomes(), target_weights(policy, states, actions), behavior.prob_of(states, actions),
    )


def wis_harm(data, policy, behavior, harm_model, kind=PenaltyKind.HARM_RATE):
    """
    WIS estimate of harm against the harm model's reference. Only rows with
    A = pi(X) carry weight, so the signal can be evaluated at the logged
    action.
    """
    _check_policy(data, policy)
    states, actions = data.flat_states(), data.flat_actions()
    signal = harm_model.harm(states, actions, kind)
    return weighted_importance_sampling(signal, target_weights(policy, states, actions), behavior.prob_of(states, actions))


def matched_fraction(data, policy):
    weights = target_weights(policy, data.flat_states(), data.flat_actions())
    return float(np.mean(weights > 0))


def bootstrap_standard_error(data, estimator, n_boot=200, seed=0):
    """Standard error of ``estimator(dataset)`` from resampling individuals with replacement."""
    rng = np.random.default_rng(seed)
    estimates = []
    for _ in range(n_boot):
        sample = data.subset(rng.integers(0, data.n_individuals, data.n_individuals))
        try:
            estimates.append(estimator(sample))
        except NoOverlapError:
            continue
    if len(estimates) < 2:
        raise NoOverlapError("too few bootstrap resamples overlap with the target policy")
    if len(estimates) < n_boot:
        logger.warning("%d of %d bootstrap resamples had no overlap", n_boot - len(estimates), n_boot)
    return float(np.std(estimates, ddof=1))


@dataclass(frozen=True)
class OpeReport:
    wis_outcome: float
    wis_harm: float
    matched_fraction: float

    def as_dict(self):
        return {"wis_outcome": self.wis_outcome, "wis_harm": self.wis_harm, "matched_fraction": self.matched_fraction}


def evaluate_offline(data, policy, behavior, harm_model, kind=PenaltyKind.HARM_RATE):
    return OpeReport(
        wis_outcome=wis_outcome(data, policy, behavior),
        wis_harm=wis_harm(data, policy, behavior, harm_model, kind),
        matched_fraction=matched_fraction(data, policy),
    )

"""
Counterfactual harm under a Gaussian copula.

The harm rate HR(x; a, a') is the probability that action a yields a strictly
worse outcome than the reference action a' for the same individual; the harm
value HQ(x; a, a') is the expected size of that shortfall. Both are
identified from the per-action conditional means r(x, a) and standard
deviations sigma(x, a) once a copula correlation rho is fixed.
"""
import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np
from scipy.stats import norm

from .exceptions import CoverageError, DomainError, SerializationError, ShapeError
from .policies import ConstantPolicy, policy_from_dict, policy_to_dict
from .regression import (
    DEFAULT_RIDGE, FeatureMap, TrainingConfig, fit_linear_model, fit_mlp_regressor,
    model_from_dict, model_to_dict,
)

logger = logging.getLogger(__name__)

DEGENERATE_SD = 1e-12
DEFAULT_VARIANCE_FLOOR = 1e-6


class PenaltyKind(str, Enum):
    HARM_RATE = "harm-rate"
    HARM_VALUE = "harm-value"


@dataclass(frozen=True)
class PenaltyConfig:
    beta: float = 0.5
    kind: PenaltyKind = PenaltyKind.HARM_RATE

    def __post_init__(self):
        if not self.beta >= 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")
        object.__setattr__(self, "kind", PenaltyKind(self.kind))


def _copula_inputs(r_a, r_ref, sigma_a, sigma_ref, rho):
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"copula correlation must lie in [-1, 1], got {rho}")
    r_a, r_ref, sigma_a, sigma_ref = np.broadcast_arrays(
        np.asarray(r_a, dtype=float), np.asarray(r_ref, dtype=float),
        np.asarray(sigma_a, dtype=float), np.asarray(sigma_ref, dtype=float),
    )
    if np.any(~(sigma_a > 0)) or np.any(~(sigma_ref > 0)):
        raise DomainError("standard deviations must be positive")
    variance = sigma_a ** 2 + sigma_ref ** 2 - 2.0 * rho * sigma_a * sigma_ref
    return r_ref - r_a, np.sqrt(np.maximum(variance, 0.0))


def _scalar_or_array(values):
    return float(values) if np.ndim(values) == 0 else values


def copula_difference_sd(sigma_a, sigma_ref, rho):
    """Standard deviation of Y(a) - Y(a') under the Gaussian copula."""
    return _copula_inputs(0.0, 0.0, sigma_a, sigma_ref, rho)[1]


def gaussian_copula_harm_rate(r_a, r_ref, sigma_a, sigma_ref, rho):
    """P(Y(a) < Y(a')) = Phi((r_ref - r_a) / sigma_diff); step-function limit when sigma_diff vanishes."""
    gap, sd = _copula_inputs(r_a, r_ref, sigma_a, sigma_ref, rho)
    degenerate = sd < DEGENERATE_SD
    z = gap / np.where(degenerate, 1.0, sd)
    limit = np.where(gap > 0, 1.0, np.where(gap < 0, 0.0, 0.5))
    return _scalar_or_array(np.where(degenerate, limit, norm.cdf(z)))


def gaussian_copula_harm_value(r_a, r_ref, sigma_a, sigma_ref, rho):
    """E[(Y(a') - Y(a))^+] = gap * Phi(gap / sd) + sd * phi(gap / sd); max(gap, 0) when sd vanishes."""
    gap, sd = _copula_inputs(r_a, r_ref, sigma_a, sigma_ref, rho)
    degenerate = sd < DEGENERATE_SD
    z = gap / np.where(degenerate, 1.0, sd)
    value = np.maximum(gap * norm.cdf(z) + sd * norm.pdf(z), 0.0)
    return _scalar_or_array(np.where(degenerate, np.maximum(gap, 0.0), value))


@dataclass(frozen=True)
class HarmModel:
    mean_models: tuple
    var_models: tuple
    rho: float
    reference: object
    state_dim: int
    variance_floor: float = DEFAULT_VARIANCE_FLOOR

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"copula correlation must lie in [-1, 1], got {self.rho}")
        if not self.variance_floor > 0:
            raise DomainError("variance floor must be positive")
        if len(self.mean_models) != len(self.var_models):
            raise ShapeError("one mean and one variance regressor per action are required")
        if not getattr(self.reference, "is_deterministic", False):
            raise DomainError("the reference must be a fixed action or a deterministic policy")
        object.__setattr__(self, "mean_models", tuple(self.mean_models))
        object.__setattr__(self, "var_models", tuple(self.var_models))

    @property
    def n_actions(self):
        return len(self.mean_models)

    def _states(self, states):
        states = np.asarray(states, dtype=float)
        if states.ndim == 0:
            states = states.reshape(1, 1)
        elif states.ndim == 1:
            states = states[:, None] if self.state_dim == 1 else states[None, :]
        if states.shape[1] != self.state_dim:
            raise ShapeError(f"expected states with {self.state_dim} columns, got {states.shape[1]}")
        return states

    def _by_action(self, models, states, actions):
        states = self._states(states)
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64).reshape(-1), (states.shape[0],))
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ShapeError(f"action codes must lie in [0, {self.n_actions})")
        out = np.empty(states.shape[0])
        for a in np.unique(actions):
            rows = actions == a
            out[rows] = models[a].predict(states[rows])
        return out

    def mean(self, states, actions):
        return self._by_action(self.mean_models, states, actions)

    def variance(self, states, actions):
        return np.maximum(self._by_action(self.var_models, states, actions), self.variance_floor)

    def sigma(self, states, actions):
        return np.sqrt(self.variance(states, actions))

    def reference_actions(self, states):
        return np.asarray(self.reference.act(self._states(states)), dtype=np.int64)

    def _pairwise(self, formula, states, actions, ref_actions):
        states = self._states(states)
        n = states.shape[0]
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64).reshape(-1), (n,))
        if ref_actions is None:
            ref_actions = self.reference_actions(states)
        ref_actions = np.broadcast_to(np.asarray(ref_actions, dtype=np.int64).reshape(-1), (n,))
        harm = np.atleast_1d(formula(
            self.mean(states, actions), self.mean(states, ref_actions),
            self.sigma(states, actions), self.sigma(states, ref_actions), self.rho,
        ))
        # Y(a) - Y(a) = 0 almost surely: no harm against oneself
        return np.where(actions == ref_actions, 0.0, harm)

    def harm_rate(self, states, actions, ref_actions=None):
        return self._pairwise(gaussian_copula_harm_rate, states, actions, ref_actions)

    def harm_value(self, states, actions, ref_actions=None):
        return self._pairwise(gaussian_copula_harm_value, states, actions, ref_actions)

    def harm(self, states, actions, kind=PenaltyKind.HARM_RATE, ref_actions=None):
        if PenaltyKind(kind) is PenaltyKind.HARM_VALUE:
            return self.harm_value(states, actions, ref_actions)
        return self.harm_rate(states, actions, ref_actions)

    def with_rho(self, rho):
        return replace(self, rho=rho)

    def to_dict(self):
        return {
            "rho": self.rho,
            "state_dim": self.state_dim,
            "variance_floor": self.variance_floor,
            "reference": policy_to_dict(self.reference),
            "mean_models": [model_to_dict(m) for m in self.mean_models],
            "var_models": [model_to_dict(m) for m in self.var_models],
        }

    @classmethod
    def from_dict(cls, payload):
        try:
            return cls(
                mean_models=tuple(model_from_dict(m) for m in payload["mean_models"]),
                var_models=tuple(model_from_dict(m) for m in payload["var_models"]),
                rho=float(payload["rho"]),
                reference=policy_from_dict(payload["reference"]),
                state_dim=int(payload["state_dim"]),
                variance_floor=float(payload.get("variance_floor", DEFAULT_VARIANCE_FLOOR)),
            )
        except KeyError as exc:
            raise SerializationError(f"harm model document is missing {exc}") from exc


def _fit_regressor(states, targets, kind, degree, ridge, mlp_config):
    if kind == "mlp":
        return fit_mlp_regressor(states, targets, config=mlp_config or TrainingConfig())
    if kind != "linear":
        raise DomainError(f"unknown regressor kind {kind!r}")
    feature_map = FeatureMap(state_dim=states.shape[1], n_actions=1, degree=degree)
    return fit_linear_model(states, targets, feature_map, ridge=ridge)


def fit_harm_model(data, rho=1.0, reference=0, regressor_kind="linear", degree=2, ridge=DEFAULT_RIDGE,
                   mlp_config=None, variance_floor=DEFAULT_VARIANCE_FLOOR):
    """
    Plug-in estimation of r(x, a) and sigma^2(x, a), one regression pair per action.

    The mean model regresses Y on X over the rows with A = a; the variance
    model regresses the squared residuals (Y - r_hat(X, a))^2 on X over the
    same rows.
    """
    if isinstance(reference, (int, np.integer)):
        reference = ConstantPolicy(action=int(reference), n_actions=data.n_actions)

    states = data.flat_states()
    actions = data.flat_actions()
    outcomes = data.flat_outcomes()

    mean_models, var_models = [], []
    for a in range(data.n_actions):
        rows = actions == a
        support = int(rows.sum())
        if support == 0:
            raise CoverageError(f"action {a} never occurs in the data; r(x, {a}) is not estimable")
        if support == 1:
            raise CoverageError(f"action {a} occurs only once; sigma(x, {a}) is not estimable")

        config_a = None
        if mlp_config is not None:
            config_a = replace(mlp_config, seed=mlp_config.seed + 2 * a)
        mean_model = _fit_regressor(states[rows], outcomes[rows], regressor_kind, degree, ridge, config_a)
        residuals = outcomes[rows] - mean_model.predict(states[rows])
        if mlp_config is not None:
            config_a = replace(mlp_config, seed=mlp_config.seed + 2 * a + 1)
        var_model = _fit_regressor(states[rows], residuals ** 2, regressor_kind, degree, ridge, config_a)

        logger.debug("action %d: %d rows, mean squared residual %.4g", a, support, float(np.mean(residuals ** 2)))
        mean_models.append(mean_model)
        var_models.append(var_model)

    return HarmModel(
        mean_models=tuple(mean_models),
        var_models=tuple(var_models),
        rho=rho,
        reference=reference,
        state_dim=data.state_dim,
        variance_floor=variance_floor,
    )


def transform_utilities(data, model, penalty):
    """Pseudo-utilities R = Y - beta * harm(X; A, reference), shaped N x (T+1)."""
    if model.state_dim != data.state_dim or model.n_actions != data.n_actions:
        raise ShapeError(
            f"harm model (p={model.state_dim}, |A|={model.n_actions}) does not match "
            f"data (p={data.state_dim}, |A|={data.n_actions})"
        )
    if penalty.beta == 0:
        return np.array(data.outcomes, dtype=float)
    harm = model.harm(data.flat_states(), data.flat_actions(), penalty.kind)
    return data.outcomes - penalty.beta * harm.reshape(data.outcomes.shape)


def policy_relative_harm_rate(model, x, pi_action, ref_policy_action):
    """HR(x; pi(x), pi0(x)): the action-level harm rate between two policies' choices."""
    return _scalar_or_array(np.squeeze(model.harm_rate(x, pi_action, ref_actions=ref_policy_action)))


def policy_relative_harm(model, states, policy, reference_policy, kind=PenaltyKind.HARM_RATE):
    """Per-state harm of ``policy`` against ``reference_policy``, both deterministic."""
    return model.harm(states, policy.act(states), kind, ref_actions=reference_policy.act(states))

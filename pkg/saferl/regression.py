"""
Regression backends: exact ridge least squares over a polynomial-by-action
feature map, and a one-hidden-layer ReLU network trained with Adam.
"""
import itertools
import logging
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .exceptions import DivergenceError, RankDeficiencyError, SerializationError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6


def _as_states(states, state_dim):
    states = np.asarray(states, dtype=float)
    if states.ndim == 0:
        states = states.reshape(1, 1)
    elif states.ndim == 1:
        states = states[:, None] if state_dim == 1 else states[None, :]
    if states.shape[1] != state_dim:
        raise ShapeError(f"expected states with {state_dim} columns, got {states.shape[1]}")
    return states


@dataclass(frozen=True)
class FeatureMap:
    """Polynomial state terms (degree <= ``degree``) crossed with a one-hot action block."""
    state_dim: int
    n_actions: int = 1
    degree: int = 2
    include_bias: bool = True
    kind: str = "poly-onehot"

    def __post_init__(self):
        if self.kind != "poly-onehot":
            raise ShapeError(f"unknown feature map kind {self.kind!r}")
        if self.degree < 1 or self.state_dim < 1 or self.n_actions < 1:
            raise ShapeError("feature map needs degree >= 1, state_dim >= 1, n_actions >= 1")

    @cached_property
    def exponents(self):
        rows = []
        for total in range(0 if self.include_bias else 1, self.degree + 1):
            for combo in itertools.combinations_with_replacement(range(self.state_dim), total):
                exps = np.zeros(self.state_dim, dtype=int)
                for j in combo:
                    exps[j] += 1
                rows.append(exps)
        return np.array(rows)

    @property
    def n_terms(self):
        return self.exponents.shape[0]

    @property
    def output_dim(self):
        return self.n_terms * self.n_actions

    def state_features(self, states):
        states = _as_states(states, self.state_dim)
        return np.prod(states[:, None, :] ** self.exponents[None, :, :], axis=2)

    def transform(self, states, actions=None):
        base = self.state_features(states)
        if self.n_actions == 1:
            return base
        if actions is None:
            raise ShapeError("actions are required for a multi-action feature map")
        actions = np.broadcast_to(np.asarray(actions, dtype=np.int64).reshape(-1), (base.shape[0],))
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ShapeError(f"action codes must lie in [0, {self.n_actions})")
        out = np.zeros((base.shape[0], self.output_dim))
        cols = actions[:, None] * self.n_terms + np.arange(self.n_terms)[None, :]
        np.put_along_axis(out, cols, base, axis=1)
        return out

    def to_dict(self):
        return {"kind": self.kind, "state_dim": self.state_dim, "n_actions": self.n_actions,
                "degree": self.degree, "include_bias": self.include_bias}


def gram_min_eigenvalue(X):
    X = np.asarray(X, dtype=float)
    return float(np.linalg.eigvalsh(X.T @ X / max(X.shape[0], 1)).min())


def fit_linear_least_squares(X, y, ridge=DEFAULT_RIDGE):
    """Minimise ||Xw - y||^2 + ridge * ||w||^2 through a Cholesky solve of the normal equations."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ShapeError(f"design matrix must be n x d with n, d >= 1, got {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} design rows for {y.shape[0]} targets")
    if ridge < 0:
        raise ShapeError("ridge must be nonnegative")

    gram = X.T @ X
    if ridge > 0:
        gram[np.diag_indices_from(gram)] += ridge
    elif np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError(
            f"Gram matrix is singular (rank {np.linalg.matrix_rank(X)} < {X.shape[1]}); use a positive ridge"
        )
    try:
        factor = linalg.cho_factor(gram, lower=False)
    except linalg.LinAlgError as exc:
        raise RankDeficiencyError("Gram matrix is not positive definite; use a positive ridge") from exc
    return linalg.cho_solve(factor, X.T @ y)


@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    feature_map: FeatureMap
    ridge: float = DEFAULT_RIDGE
    gram_min_eigenvalue: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.shape[0] != self.feature_map.output_dim:
            raise ShapeError(f"{weights.shape[0]} weights for a {self.feature_map.output_dim}-dim feature map")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)

    @property
    def n_outputs(self):
        return self.feature_map.n_actions

    def predict(self, states, actions=None):
        return self.feature_map.transform(states, actions) @ self.weights

    def action_values(self, states):
        """(m, n_actions) matrix of predictions for every action."""
        base = self.feature_map.state_features(states)
        return base @ self.weights.reshape(self.feature_map.n_actions, self.feature_map.n_terms).T

    def parameter_vector(self):
        return self.weights


def fit_linear_model(states, y, feature_map, actions=None, ridge=DEFAULT_RIDGE):
    X = feature_map.transform(states, actions)
    weights = fit_linear_least_squares(X, y, ridge=ridge)
    min_eig = gram_min_eigenvalue(X)
    logger.debug("linear fit: n=%d d=%d ridge=%g min Gram eigenvalue=%.3e", X.shape[0], X.shape[1], ridge, min_eig)
    return LinearModel(weights=weights, feature_map=feature_map, ridge=ridge, gram_min_eigenvalue=min_eig)


# --- one-hidden-layer MLP ---

@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 50
    hidden_units: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    zero_output_init: bool = False

    @classmethod
    def from_dict(cls, config):
        known = cls.__dataclass_fields__
        return cls(**{k: known[k].type(v) for k, v in (config or {}).items() if k in known})

    def to_dict(self):
        return asdict(self)


PARAM_NAMES = ("W1", "b1", "W2", "b2")


def init_mlp_params(n_inputs, n_outputs, hidden_units, rng, zero_output=False):
    def glorot(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return {
        "W1": glorot(n_inputs, hidden_units),
        "b1": np.zeros(hidden_units),
        "W2": np.zeros((hidden_units, n_outputs)) if zero_output else glorot(hidden_units, n_outputs),
        "b2": np.zeros(n_outputs),
    }


def mlp_forward(params, X):
    z1 = X @ params["W1"] + params["b1"]
    hidden = np.maximum(z1, 0.0)
    return z1, hidden, hidden @ params["W2"] + params["b2"]


def mlp_loss_and_gradients(params, X, y, actions=None):
    """
    Mean squared error of the network and its gradients.

    With ``actions`` the loss is taken on output head ``actions[i]`` of row i
    only (Q-network layout); otherwise on the single output.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    rows = np.arange(n)
    cols = np.zeros(n, dtype=np.int64) if actions is None else np.asarray(actions, dtype=np.int64)

    z1, hidden, out = mlp_forward(params, X)
    resid = out[rows, cols] - y
    loss = float(np.mean(resid ** 2))

    d_out = np.zeros_like(out)
    d_out[rows, cols] = 2.0 * resid / n
    d_hidden = (d_out @ params["W2"].T) * (z1 > 0)
    grads = {
        "W1": X.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
        "W2": hidden.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    return loss, grads


class Adam:
    def __init__(self, params, learning_rate=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        updated = {}
        for name, value in params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            updated[name] = value - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)
        return updated


@dataclass(frozen=True)
class MLPModel:
    params: dict
    n_inputs: int
    n_outputs: int = 1
    config: TrainingConfig = field(default_factory=TrainingConfig)
    epochs_trained: int = 0
    loss_history: tuple = field(default=(), compare=False)

    def __post_init__(self):
        frozen = {}
        for name in PARAM_NAMES:
            value = np.array(self.params[name], dtype=float)
            value.setflags(write=False)
            frozen[name] = value
        if frozen["W1"].shape[0] != self.n_inputs or frozen["W2"].shape[1] != self.n_outputs:
            raise ShapeError("network parameter shapes disagree with n_inputs / n_outputs")
        object.__setattr__(self, "params", frozen)

    @property
    def hidden_units(self):
        return self.params["W1"].shape[1]

    def action_values(self, states):
        X = _as_states(states, self.n_inputs)
        return mlp_forward(self.params, X)[2]

    def predict(self, states, actions=None):
        out = self.action_values(states)
        if actions is not None:
            actions = np.broadcast_to(np.asarray(actions, dtype=np.int64).reshape(-1), (out.shape[0],))
            if actions.min() < 0 or actions.max() >= self.n_outputs:
                raise ShapeError(f"action codes must lie in [0, {self.n_outputs})")
            return out[np.arange(out.shape[0]), actions]
        return out[:, 0] if self.n_outputs == 1 else out

    def parameter_vector(self):
        return np.concatenate([self.params[name].reshape(-1) for name in PARAM_NAMES])


def fit_mlp_regressor(X, y, config=None, actions=None, n_outputs=1, init=None):
    """
    Train a one-hidden-layer ReLU network on mean squared error with Adam.

    ``init`` warm-starts from an existing model. Deterministic given
    ``config.seed``.
    """
    config = config or TrainingConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).reshape(-1)
    n = X.shape[0]
    if n != y.shape[0]:
        raise ShapeError(f"{n} input rows for {y.shape[0]} targets")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ShapeError("MLP inputs and targets must be finite")
    if actions is not None:
        actions = np.asarray(actions, dtype=np.int64).reshape(-1)

    rng = np.random.default_rng(config.seed)
    if init is not None:
        if init.n_inputs != X.shape[1] or init.n_outputs != n_outputs:
            raise ShapeError("warm-start model does not match the data")
        params = {k: np.array(v) for k, v in init.params.items()}
        epochs_before = init.epochs_trained
        history = list(init.loss_history)
    else:
        params = init_mlp_params(X.shape[1], n_outputs, config.hidden_units, rng, config.zero_output_init)
        epochs_before = 0
        history = []

    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    batch_size = max(1, min(config.batch_size, n))
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            loss, grads = mlp_loss_and_gradients(params, X[rows], y[rows], None if actions is None else actions[rows])
            if not np.isfinite(loss):
                raise DivergenceError(f"MLP loss became non-finite at epoch {epoch}", epoch=epochs_before + epoch)
            params = optimizer.step(params, grads)
        epoch_loss, _ = mlp_loss_and_gradients(params, X, y, actions)
        if not np.isfinite(epoch_loss):
            raise DivergenceError(f"MLP loss became non-finite at epoch {epoch}", epoch=epochs_before + epoch)
        history.append(epoch_loss)
        logger.debug("mlp epoch %d/%d loss=%.6f", epoch, config.epochs, epoch_loss)

    if not all(np.all(np.isfinite(v)) for v in params.values()):
        raise DivergenceError("MLP parameters contain NaN after training", epoch=epochs_before + config.epochs)
    return MLPModel(params=params, n_inputs=X.shape[1], n_outputs=n_outputs, config=config,
                    epochs_trained=epochs_before + config.epochs, loss_history=tuple(history))


def predict(model, states, actions=None):
    """Batched prediction for either backend."""
    return model.predict(states, actions)


# --- JSON serialisation ---

def model_to_dict(model):
    if isinstance(model, LinearModel):
        return {
            "type": "linear",
            "weights": model.weights.tolist(),
            "feature_map": model.feature_map.to_dict(),
            "ridge": model.ridge,
        }
    if isinstance(model, MLPModel):
        return {
            "type": "mlp",
            "n_inputs": model.n_inputs,
            "n_outputs": model.n_outputs,
            "epochs_trained": model.epochs_trained,
            "config": model.config.to_dict(),
            "params": {name: model.params[name].tolist() for name in PARAM_NAMES},
        }
    raise SerializationError(f"cannot serialise {type(model).__name__}")


def model_from_dict(payload):
    kind = payload.get("type")
    if kind == "linear":
        return LinearModel(
            weights=np.asarray(payload["weights"], dtype=float),
            feature_map=FeatureMap(**payload["feature_map"]),
            ridge=float(payload.get("ridge", DEFAULT_RIDGE)),
        )
    if kind == "mlp":
        return MLPModel(
            params={name: np.asarray(payload["params"][name], dtype=float) for name in PARAM_NAMES},
            n_inputs=int(payload["n_inputs"]),
            n_outputs=int(payload["n_outputs"]),
            config=TrainingConfig.from_dict(payload.get("config")),
            epochs_trained=int(payload.get("epochs_trained", 0)),
        )
    raise SerializationError(f"unknown model type {kind!r}")

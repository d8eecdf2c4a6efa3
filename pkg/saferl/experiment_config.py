"""
Experiment configuration files.

A config is a YAML document of flat tables (``experiment``, ``env``,
``data``, ``harm``, ``fqi``, ``mlp``, ``ope``). Missing keys take the
defaults below; unknown tables or keys are rejected. The normalised document
is hashed so every run directory can be traced back to its exact settings.
"""
import copy
import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import yaml

from .data import ActionMapping, LongitudinalSchema
from .envs import N_ACTIONS, EnvSpec
from .exceptions import ConfigError, SaferlError
from .fqi import FqiConfig
from .harm import PenaltyKind
from .ope import BehaviorKind
from .regression import TrainingConfig


class Method(str, Enum):
    HARM_AWARE = "harm-aware"
    UNAWARE = "unaware"
    BEHAVIOR = "behavior"
    RANDOM = "random"


DEFAULTS = {
    "experiment": {
        "name": "experiment",
        "methods": [m.value for m in Method],
        "betas": [0.5],
        "sample_sizes": [1000],
        "replications": 20,
        "seed": 0,
        "gamma": 0.9,
        "output_dir": None,
    },
    "env": {
        "kind": "linear",
        "horizon": 20,
        "transition_noise": None,
        "outcome_noise": None,
        "noise_scale": "variance",
        "initial_mean": 0.0,
        "initial_sd": 1.0,
    },
    "data": {
        "path": None,
        "id_column": "id",
        "time_column": "t",
        "state_columns": ["x_1"],
        "action_columns": ["a"],
        "outcome_column": "y",
        "action_mapping": None,
        "allow_unseen_actions": False,
    },
    "harm": {
        "rho": [1.0],
        "penalty_kind": PenaltyKind.HARM_RATE.value,
        "reference_action": 0,
        "regressor": "linear",
        "degree": 2,
        "ridge": 1e-6,
        "variance_floor": 1e-6,
    },
    "fqi": {
        "mode": "full",
        "backend": "linear",
        "iterations": 50,
        "convergence_tol": 1e-5,
        "convergence_norm": "max-abs",
        "degree": 2,
        "include_bias": True,
        "ridge": 1e-6,
        "target_update_epochs": 10,
    },
    "mlp": {
        "learning_rate": 0.001,
        "batch_size": 64,
        "epochs": 50,
        "hidden_units": 64,
    },
    "ope": {
        "behavior_model": BehaviorKind.EMPIRICAL.value,
        "probability_floor": 1e-3,
        "bootstrap": 0,
    },
}

LIST_KEYS = {("experiment", "methods"), ("experiment", "betas"), ("experiment", "sample_sizes"), ("harm", "rho"),
             ("data", "state_columns"), ("data", "action_columns")}


FLOAT_KEYS = {("env", "transition_noise"), ("env", "outcome_noise")}


def _coerce(table, key, value):
    """Cast scalars to the type of their default; YAML reads ``1e-6`` as a string."""
    default = DEFAULTS[table][key]
    if value is None or isinstance(default, (list, dict)):
        return value
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError(f"expected true/false, got {value!r}")
            return value
        if isinstance(default, float) or (table, key) in FLOAT_KEYS:
            return float(value)
        if isinstance(default, int):
            return int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{table}] {key}: {exc}") from exc
    return value


def _normalise(document):
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ConfigError("experiment config must be a mapping of tables")
    unknown = sorted(set(document) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config table(s): {unknown}")

    normalised = copy.deepcopy(DEFAULTS)
    for table, values in document.items():
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"[{table}] must be a table of key/value pairs")
        unknown = sorted(set(values) - set(DEFAULTS[table]))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{table}]: {unknown}")
        for key, value in values.items():
            if (table, key) in LIST_KEYS and not isinstance(value, (list, tuple)):
                value = [value]
            normalised[table][key] = _coerce(table, key, value)
    normalised["_offline"] = bool("data" in document and (document["data"] or {}).get("path"))
    return normalised


@dataclass(frozen=True)
class DataSource:
    path: Path
    schema: LongitudinalSchema
    mapping: ActionMapping
    allow_unseen_actions: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    methods: tuple
    betas: tuple
    rhos: tuple
    sample_sizes: tuple
    replications: int
    seed: int
    gamma: float
    output_dir: str
    penalty_kind: PenaltyKind
    reference_action: int
    harm_regressor: str
    harm_degree: int
    harm_ridge: float
    variance_floor: float
    env: EnvSpec
    data: DataSource
    fqi: FqiConfig
    behavior_model: BehaviorKind
    probability_floor: float
    bootstrap: int
    document: dict

    @property
    def is_offline(self):
        return self.data is not None

    @property
    def horizon(self):
        return self.env.horizon

    @property
    def schema(self):
        return LongitudinalSchema.from_dict(self.document["data"])

    @property
    def mapping(self):
        return ActionMapping.from_dict(self.document["data"]["action_mapping"])

    @property
    def allow_unseen_actions(self):
        return self.document["data"]["allow_unseen_actions"]

    def check_reference_action(self, n_actions):
        """Raise ConfigError unless the reference action is one of ``n_actions`` codes."""
        if n_actions is not None and not 0 <= self.reference_action < n_actions:
            raise ConfigError(
                f"[harm] reference_action {self.reference_action} is outside the action range [0, {n_actions})"
            )

    @property
    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def to_dict(self):
        """The normalised document, parseable again by ``parse_experiment_config``."""
        document = copy.deepcopy(self.document)
        document.pop("_offline", None)
        if not self.is_offline:
            document.pop("data", None)
        return document

    def with_overrides(self, seed=None, output_dir=None, sample_sizes=None, replications=None, fqi_mode=None):
        document = self.to_dict()
        if fqi_mode is not None:
            document["fqi"]["mode"] = fqi_mode
        overrides = {"seed": seed, "output_dir": output_dir, "sample_sizes": sample_sizes, "replications": replications}
        for key, value in overrides.items():
            if value is not None:
                document["experiment"][key] = value
        return parse_experiment_config(document)


def _declared_n_actions(config):
    """Action count known before any data is read; None for an identity-mapped log of unknown width."""
    mapping = config.mapping
    if not mapping.is_identity or mapping.n_actions is not None:
        return mapping.n_actions
    return None if config.is_offline else N_ACTIONS


def parse_experiment_config(document):
    normalised = _normalise(document)
    exp, env, data, harm, fqi, mlp, ope = (normalised[t] for t in DEFAULTS)
    try:
        methods = tuple(Method(m) for m in exp["methods"])
        if not methods:
            raise ConfigError("[experiment] methods must not be empty")
        betas = tuple(float(b) for b in exp["betas"])
        rhos = tuple(float(r) for r in harm["rho"])
        sample_sizes = tuple(int(n) for n in exp["sample_sizes"])
        if not betas or not rhos or not sample_sizes:
            raise ConfigError("beta, rho and sample size grids must not be empty")
        if any(b < 0 for b in betas):
            raise ConfigError(f"betas must be nonnegative, got {list(betas)}")
        if any(not -1.0 <= r <= 1.0 for r in rhos):
            raise ConfigError(f"rho values must lie in [-1, 1], got {list(rhos)}")
        if any(n < 1 for n in sample_sizes):
            raise ConfigError("sample sizes must be positive")
        replications = int(exp["replications"])
        if replications < 1:
            raise ConfigError("replications must be at least 1")
        seed = int(exp["seed"])
        if seed < 0:
            raise ConfigError("seed must be nonnegative")
        if int(harm["reference_action"]) < 0:
            raise ConfigError("[harm] reference_action must be nonnegative")

        env_spec = EnvSpec(seed=seed, **env)
        source = None
        if normalised["_offline"]:
            source = DataSource(
                path=Path(data["path"]),
                schema=LongitudinalSchema.from_dict(data),
                mapping=ActionMapping.from_dict(data["action_mapping"]),
                allow_unseen_actions=data["allow_unseen_actions"],
            )
        training = TrainingConfig.from_dict({**mlp, "seed": seed})
        fqi_config = FqiConfig(gamma=float(exp["gamma"]), mlp=training, seed=seed, **fqi)
        if harm["regressor"] not in ("linear", "mlp"):
            raise ConfigError(f"[harm] regressor must be 'linear' or 'mlp', got {harm['regressor']!r}")

        config = ExperimentConfig(
            name=str(exp["name"]),
            methods=methods,
            betas=betas,
            rhos=rhos,
            sample_sizes=sample_sizes,
            replications=replications,
            seed=seed,
            gamma=float(exp["gamma"]),
            output_dir=exp["output_dir"],
            penalty_kind=PenaltyKind(harm["penalty_kind"]),
            reference_action=int(harm["reference_action"]),
            harm_regressor=harm["regressor"],
            harm_degree=int(harm["degree"]),
            harm_ridge=float(harm["ridge"]),
            variance_floor=float(harm["variance_floor"]),
            env=env_spec,
            data=source,
            fqi=fqi_config,
            behavior_model=BehaviorKind(ope["behavior_model"]),
            probability_floor=float(ope["probability_floor"]),
            bootstrap=int(ope["bootstrap"]),
            document=normalised,
        )
        config.check_reference_action(_declared_n_actions(config))
        return config
    except ConfigError:
        raise
    except (SaferlError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def load_experiment_config(path):
    path = Path(path)
    try:
        with open(path) as f:
            document = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path.name}: not valid YAML ({exc})") from exc
    return parse_experiment_config(document)

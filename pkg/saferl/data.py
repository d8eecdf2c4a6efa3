"""
Containers for logged longitudinal trajectories.

A ``TrajectoryDataset`` holds N individuals observed over T+1 steps
(states, actions, outcomes). ``pool_transitions`` flattens it into the
N*T transition tuples consumed by fitted Q-iteration, and
``load_longitudinal_csv`` ingests wide CSV exports (one row per id x time)
with an optional categorical ``ActionMapping``.
"""
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import MappingError, MissingDataError, SchemaError, ShapeError

logger = logging.getLogger(__name__)


def _frozen(array, dtype):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TrajectoryDataset:
    states: np.ndarray      # (N, T+1, p)
    actions: np.ndarray     # (N, T+1)
    outcomes: np.ndarray    # (N, T+1)
    n_actions: int
    individual_ids: tuple = ()
    action_labels: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 2:
            states = states[:, :, None]
        actions = np.asarray(self.actions)
        outcomes = np.asarray(self.outcomes, dtype=float)

        if states.ndim != 3:
            raise ShapeError(f"states must be N x (T+1) x p, got shape {states.shape}")
        lead = states.shape[:2]
        if actions.shape != lead or outcomes.shape != lead:
            raise ShapeError(
                f"states {states.shape}, actions {actions.shape} and outcomes {outcomes.shape} "
                "must share the leading N x (T+1) shape"
            )
        n, steps, p = states.shape
        if n < 1 or steps < 2 or p < 1:
            raise ShapeError(f"need N >= 1, T >= 1, p >= 1; got N={n}, T={steps - 1}, p={p}")
        if self.n_actions < 2:
            raise ShapeError(f"n_actions must be at least 2, got {self.n_actions}")
        if not np.all(np.isfinite(states)) or not np.all(np.isfinite(outcomes)):
            raise MissingDataError("states and outcomes must be finite (missing values are not imputed)")
        if not np.issubdtype(actions.dtype, np.integer):
            if not np.all(np.equal(np.mod(actions, 1), 0)):
                raise ShapeError("actions must be integer codes")
        actions = actions.astype(np.int64)
        if actions.min() < 0 or actions.max() >= self.n_actions:
            raise ShapeError(
                f"action codes must lie in [0, {self.n_actions}), got [{actions.min()}, {actions.max()}]"
            )

        ids = tuple(self.individual_ids) if len(self.individual_ids) else tuple(range(n))
        if len(ids) != n:
            raise ShapeError(f"{len(ids)} individual ids for {n} trajectories")

        object.__setattr__(self, "states", _frozen(states, float))
        object.__setattr__(self, "actions", _frozen(actions, np.int64))
        object.__setattr__(self, "outcomes", _frozen(outcomes, float))
        object.__setattr__(self, "individual_ids", ids)
        object.__setattr__(self, "action_labels", dict(self.action_labels))

    @property
    def n_individuals(self):
        return self.states.shape[0]

    @property
    def horizon(self):
        return self.states.shape[1] - 1

    @property
    def state_dim(self):
        return self.states.shape[2]

    def flat_states(self):
        """All N*(T+1) states as an (N*(T+1), p) matrix, individual-major."""
        return self.states.reshape(-1, self.state_dim)

    def flat_actions(self):
        return self.actions.reshape(-1)

    def flat_outcomes(self):
        return self.outcomes.reshape(-1)

    def subset(self, individuals):
        idx = np.asarray(individuals, dtype=int)
        return TrajectoryDataset(
            states=self.states[idx],
            actions=self.actions[idx],
            outcomes=self.outcomes[idx],
            n_actions=self.n_actions,
            individual_ids=tuple(self.individual_ids[i] for i in idx),
            action_labels=self.action_labels,
        )


@dataclass(frozen=True)
class TransitionBatch:
    state: np.ndarray
    action: np.ndarray
    utility: np.ndarray
    next_state: np.ndarray
    n_actions: int
    individual: np.ndarray = None
    time: np.ndarray = None

    def __post_init__(self):
        state = np.asarray(self.state, dtype=float)
        next_state = np.asarray(self.next_state, dtype=float)
        if state.ndim == 1:
            state = state[:, None]
        if next_state.ndim == 1:
            next_state = next_state[:, None]
        n = state.shape[0]
        action = np.asarray(self.action, dtype=np.int64).reshape(-1)
        utility = np.asarray(self.utility, dtype=float).reshape(-1)
        if next_state.shape != state.shape or action.shape[0] != n or utility.shape[0] != n:
            raise ShapeError("transition arrays disagree on the number of rows")
        if n and (action.min() < 0 or action.max() >= self.n_actions):
            raise ShapeError(f"action codes must lie in [0, {self.n_actions})")
        object.__setattr__(self, "state", _frozen(state, float))
        object.__setattr__(self, "next_state", _frozen(next_state, float))
        object.__setattr__(self, "action", _frozen(action, np.int64))
        object.__setattr__(self, "utility", _frozen(utility, float))
        if self.individual is not None:
            object.__setattr__(self, "individual", _frozen(self.individual, np.int64))
        if self.time is not None:
            object.__setattr__(self, "time", _frozen(self.time, np.int64))

    def __len__(self):
        return self.state.shape[0]

    @property
    def state_dim(self):
        return self.state.shape[1]

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return TransitionBatch(
            state=self.state[rows],
            action=self.action[rows],
            utility=self.utility[rows],
            next_state=self.next_state[rows],
            n_actions=self.n_actions,
            individual=None if self.individual is None else self.individual[rows],
            time=None if self.time is None else self.time[rows],
        )

    def with_utility(self, utility):
        return TransitionBatch(
            state=self.state, action=self.action, utility=utility, next_state=self.next_state,
            n_actions=self.n_actions, individual=self.individual, time=self.time,
        )


def pool_transitions(data, utilities):
    """Flatten a dataset into N*T (x, a, R, x') rows; step T has no successor."""
    utilities = np.asarray(utilities, dtype=float)
    lead = (data.n_individuals, data.horizon + 1)
    if utilities.shape != lead:
        raise ShapeError(f"utilities shape {utilities.shape} does not match dataset shape {lead}")

    n, steps, p = data.states.shape
    horizon = steps - 1
    individual, time = np.meshgrid(np.arange(n), np.arange(horizon), indexing="ij")
    return TransitionBatch(
        state=data.states[:, :-1, :].reshape(-1, p),
        action=data.actions[:, :-1].reshape(-1),
        utility=utilities[:, :-1].reshape(-1),
        next_state=data.states[:, 1:, :].reshape(-1, p),
        n_actions=data.n_actions,
        individual=individual.reshape(-1),
        time=time.reshape(-1),
    )


def unpool_transitions(batch, n_individuals=None, horizon=None):
    """Rebuild per-individual (states, actions, utilities) from a pooled batch."""
    if batch.individual is None or batch.time is None:
        raise ShapeError("batch carries no (individual, time) source index")
    n = int(batch.individual.max()) + 1 if n_individuals is None else n_individuals
    horizon = int(batch.time.max()) + 1 if horizon is None else horizon
    if len(batch) != n * horizon:
        raise ShapeError(f"{len(batch)} rows cannot be unpooled into {n} x {horizon} transitions")

    p = batch.state_dim
    states = np.full((n, horizon + 1, p), np.nan)
    actions = np.full((n, horizon), -1, dtype=np.int64)
    utilities = np.full((n, horizon), np.nan)
    states[batch.individual, batch.time] = batch.state
    states[batch.individual, batch.time + 1] = batch.next_state
    actions[batch.individual, batch.time] = batch.action
    utilities[batch.individual, batch.time] = batch.utility
    return states, actions, utilities


# --- CSV ingestion ---

@dataclass(frozen=True)
class LongitudinalSchema:
    id_column: str = "id"
    time_column: str = "t"
    state_columns: tuple = ("x_1",)
    action_columns: tuple = ("a",)
    outcome_column: str = "y"

    @classmethod
    def for_state_dim(cls, p, **kwargs):
        return cls(state_columns=tuple(f"x_{j + 1}" for j in range(p)), **kwargs)

    @classmethod
    def from_dict(cls, config):
        config = dict(config or {})
        kwargs = {}
        for key in ("id_column", "time_column", "outcome_column"):
            if key in config:
                kwargs[key] = str(config[key])
        for key in ("state_columns", "action_columns"):
            if key in config:
                value = config[key]
                kwargs[key] = (value,) if isinstance(value, str) else tuple(str(v) for v in value)
        return cls(**kwargs)

    @property
    def columns(self):
        return (self.id_column, self.time_column, *self.state_columns, *self.action_columns, self.outcome_column)

    def to_dict(self):
        return {
            "id_column": self.id_column,
            "time_column": self.time_column,
            "state_columns": list(self.state_columns),
            "action_columns": list(self.action_columns),
            "outcome_column": self.outcome_column,
        }


def _canonical(value):
    """Normalise a raw cell so 4, 4.0 and "4" compare equal."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return str(int(value)) if value.is_integer() else repr(value)
    text = str(value).strip()
    try:
        return _canonical(float(text))
    except ValueError:
        return text


@dataclass(frozen=True)
class ColumnRule:
    column: str
    groups: tuple     # ((frozenset of canonical raw values, code), ...)
    weight: int = 1

    def __post_init__(self):
        seen = {}
        for values, code in self.groups:
            for value in values:
                if value in seen:
                    raise MappingError(
                        f"column '{self.column}': raw value {value!r} is assigned to codes {seen[value]} and {code}"
                    )
                seen[value] = code

    @property
    def codes(self):
        return sorted({code for _, code in self.groups})

    def encode(self, raw):
        lookup = {value: code for values, code in self.groups for value in values}
        codes = np.empty(len(raw), dtype=np.int64)
        for i, value in enumerate(raw):
            key = _canonical(value)
            if key not in lookup:
                raise MappingError(f"column '{self.column}': raw value {value!r} matches no mapping rule")
            codes[i] = lookup[key]
        return codes


@dataclass(frozen=True)
class ActionMapping:
    """
    Maps raw treatment columns to dense action codes.

    Each rule groups the raw values of one column into small integer codes;
    the action is the weighted sum of the per-column codes, e.g.
    ``A = 2 * Base + Comp``. With no rules the single action column is used
    as-is (identity mapping).
    """
    rules: tuple = ()
    identity_n_actions: int = None

    def __post_init__(self):
        if not self.rules:
            return
        image = self._image()
        if sorted(image) != list(range(len(image))):
            raise MappingError(f"combined action codes {sorted(image)} are not a contiguous range from 0")

    @classmethod
    def identity(cls, n_actions=None):
        return cls(rules=(), identity_n_actions=n_actions)

    @classmethod
    def from_dict(cls, config):
        if not config:
            return cls.identity()
        if config.get("combiner", "weighted-sum") != "weighted-sum":
            raise MappingError(f"unsupported combiner {config.get('combiner')!r}")
        rules = []
        for entry in config.get("columns", []):
            if "name" not in entry or "groups" not in entry:
                raise MappingError("each mapped column needs 'name' and 'groups'")
            groups = tuple(
                (frozenset(_canonical(v) for v in values), int(code))
                for code, values in entry["groups"].items()
            )
            rules.append(ColumnRule(column=str(entry["name"]), groups=groups, weight=int(entry.get("weight", 1))))
        if not rules:
            return cls.identity(config.get("n_actions"))
        return cls(rules=tuple(rules))

    def to_dict(self):
        if self.is_identity:
            return {} if self.identity_n_actions is None else {"n_actions": self.identity_n_actions}
        return {
            "combiner": "weighted-sum",
            "columns": [
                {
                    "name": rule.column,
                    "weight": rule.weight,
                    "groups": {code: sorted(values) for values, code in rule.groups},
                }
                for rule in self.rules
            ],
        }

    @property
    def is_identity(self):
        return not self.rules

    def _image(self):
        combos = itertools.product(*[rule.codes for rule in self.rules])
        return {sum(rule.weight * code for rule, code in zip(self.rules, combo)) for combo in combos}

    @property
    def n_actions(self):
        return len(self._image()) if self.rules else self.identity_n_actions

    def labels(self):
        if self.is_identity:
            return {}
        labels = {}
        for combo in itertools.product(*[rule.codes for rule in self.rules]):
            code = sum(rule.weight * c for rule, c in zip(self.rules, combo))
            labels[code] = ",".join(f"{rule.column}={c}" for rule, c in zip(self.rules, combo))
        return labels

    def apply(self, frame, action_columns):
        """Return (codes, n_actions) for the rows of ``frame``."""
        if self.is_identity:
            if len(action_columns) != 1:
                raise MappingError("identity mapping needs exactly one action column")
            raw = frame[action_columns[0]].to_numpy()
            try:
                values = raw.astype(float)
            except (TypeError, ValueError) as exc:
                raise MappingError(f"action column '{action_columns[0]}' is not numeric") from exc
            if not np.all(np.equal(np.mod(values, 1), 0)) or values.min() < 0:
                raise MappingError("identity-mapped actions must be nonnegative integers")
            codes = values.astype(np.int64)
            n_actions = self.identity_n_actions or int(codes.max()) + 1
            if codes.max() >= n_actions:
                raise MappingError(f"action code {codes.max()} outside declared range [0, {n_actions})")
            return codes, max(n_actions, 2)

        missing = [rule.column for rule in self.rules if rule.column not in frame.columns]
        if missing:
            raise SchemaError(f"mapped action columns missing from data: {missing}")
        codes = np.zeros(len(frame), dtype=np.int64)
        for rule in self.rules:
            codes += rule.weight * rule.encode(frame[rule.column].to_numpy())
        return codes, self.n_actions


def _numeric_column(frame, column, source):
    try:
        return frame[column].to_numpy(dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{source}: column '{column}' holds non-numeric values ({exc})") from exc


def load_longitudinal_csv(path, schema=None, mapping=None, allow_unseen_actions=False):
    """
    Read a wide longitudinal CSV (one row per id x time) into a TrajectoryDataset.

    Every (id, time) pair must be unique, each id must cover the contiguous
    steps 0..T, and all ids must share the same T. Every action code the
    mapping produces must occur at least once unless ``allow_unseen_actions``
    is set, in which case the gap is only logged.
    """
    schema = schema or LongitudinalSchema()
    mapping = mapping or ActionMapping.identity()
    path = Path(path)

    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f"{path.name}: file is empty") from exc
    except pd.errors.ParserError as exc:
        raise SchemaError(f"{path.name}: not a readable CSV ({exc})") from exc
    required = list(dict.fromkeys(schema.columns))
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise SchemaError(f"{path.name}: missing columns {missing}")
    frame = frame[required]

    na_columns = frame.columns[frame.isna().any()].tolist()
    if na_columns:
        raise MissingDataError(f"{path.name}: missing values in columns {na_columns}")

    if frame.duplicated([schema.id_column, schema.time_column]).any():
        raise SchemaError(f"{path.name}: duplicate ({schema.id_column}, {schema.time_column}) pairs")

    times = _numeric_column(frame, schema.time_column, path.name)
    state_values = np.column_stack([_numeric_column(frame, c, path.name) for c in schema.state_columns])
    outcome_values = _numeric_column(frame, schema.outcome_column, path.name)
    frame = frame.assign(**{c: state_values[:, j] for j, c in enumerate(schema.state_columns)},
                         **{schema.outcome_column: outcome_values})
    if not np.all(np.equal(np.mod(times, 1), 0)):
        raise SchemaError(f"{path.name}: time column '{schema.time_column}' must hold integers")
    frame = frame.assign(**{schema.time_column: times.astype(np.int64)})

    # keep first-appearance order of ids, sort by time within each id
    order, ids = pd.factorize(frame[schema.id_column])
    frame = frame.assign(_order=order).sort_values(["_order", schema.time_column], kind="mergesort")

    counts = frame.groupby("_order", sort=True).size().to_numpy()
    if len(set(counts)) != 1:
        raise ShapeError(f"{path.name}: ragged horizons, steps per id range over {sorted(set(counts))}")
    steps = int(counts[0])
    expected = np.tile(np.arange(steps), len(ids))
    if not np.array_equal(frame[schema.time_column].to_numpy(), expected):
        raise ShapeError(f"{path.name}: time steps per id must be contiguous 0..{steps - 1}")

    codes, n_actions = mapping.apply(frame, schema.action_columns)
    n, p = len(ids), len(schema.state_columns)
    dataset = TrajectoryDataset(
        states=frame[list(schema.state_columns)].to_numpy(dtype=float).reshape(n, steps, p),
        actions=codes.reshape(n, steps),
        outcomes=frame[schema.outcome_column].to_numpy(dtype=float).reshape(n, steps),
        n_actions=n_actions,
        individual_ids=tuple(ids.tolist()),
        action_labels=mapping.labels(),
    )

    unseen = sorted(set(range(n_actions)) - set(np.unique(codes).tolist()))
    if unseen and not allow_unseen_actions:
        raise SchemaError(f"{path.name}: action codes {unseen} never occur in the data")
    if unseen:
        logger.warning("%s: action codes %s never occur in the data", path.name, unseen)
    logger.info("Loaded %s: N=%d, T=%d, p=%d, |A|=%d", path.name, n, steps - 1, p, n_actions)
    return dataset


def write_longitudinal_csv(data, path, schema=None):
    schema = schema or LongitudinalSchema.for_state_dim(data.state_dim)
    if len(schema.state_columns) != data.state_dim:
        raise SchemaError(f"schema names {len(schema.state_columns)} state columns, data has {data.state_dim}")
    action_column = schema.action_columns[0] if len(schema.action_columns) == 1 else "a"

    n, steps = data.n_individuals, data.horizon + 1
    columns = {
        schema.id_column: np.repeat(np.asarray(data.individual_ids, dtype=object), steps),
        schema.time_column: np.tile(np.arange(steps), n),
    }
    flat_states = data.flat_states()
    for j, name in enumerate(schema.state_columns):
        columns[name] = flat_states[:, j]
    columns[action_column] = data.flat_actions()
    columns[schema.outcome_column] = data.flat_outcomes()

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(columns).to_csv(path, index=False)
    return path

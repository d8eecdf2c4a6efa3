"""
Replication harness.

For every sample size N and replication r the pipeline is: log behaviour
data, fit the harm model, build pseudo-utilities for each (rho, beta), run
FQI, then score every requested method on fresh evaluation rollouts that
share their noise streams. Failures are recorded per replication; the run
aborts once half of the replications have failed.
"""
import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import scipy
import sklearn

from . import __version__
from .data import load_longitudinal_csv, pool_transitions
from .envs import N_ACTIONS, evaluate_policy, generate_dataset
from .exceptions import ExperimentAborted
from .experiment_config import Method
from .fqi import GreedyPolicy, fqi_train
from .harm import PenaltyConfig, fit_harm_model, transform_utilities
from .ope import bootstrap_standard_error, estimate_behavior_policy, evaluate_offline, wis_harm, wis_outcome
from .policies import LogisticBehaviorPolicy, UniformRandomPolicy

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "method", "beta", "rho", "N", "T", "replication", "seed",
    "disc_outcome", "avg_harm", "avg_harm_indicator_variant",
]
METRICS = ("disc_outcome", "avg_harm", "avg_harm_indicator_variant")
GROUP_KEYS = ["method", "beta", "rho", "N"]
OFFLINE_COLUMNS = ["method", "beta", "rho", "N", "T", "seed", "wis_outcome", "wis_harm", "matched_fraction"]

ABORT_FAILURE_FRACTION = 0.5


def replication_seed(seed, replication):
    """Seed for the fitted models of one replication; data streams are keyed separately."""
    return int(np.random.SeedSequence([int(seed), 2, int(replication)]).generate_state(1)[0])


@dataclass(frozen=True)
class ReplicationFailure:
    n: int
    replication: int
    error_type: str
    message: str


@dataclass
class ReplicationOutcome:
    n: int
    replication: int
    rows: list = field(default_factory=list)
    wall_time: float = 0.0
    failure: ReplicationFailure = None

    def to_dict(self):
        """JSON-safe form, as passed between Celery tasks."""
        return {
            "n": self.n,
            "replication": self.replication,
            "rows": [{key: _json_default(value) if isinstance(value, np.generic) else value
                      for key, value in row.items()} for row in self.rows],
            "wall_time": self.wall_time,
            "failure": vars(self.failure) if self.failure is not None else None,
        }

    @classmethod
    def from_dict(cls, payload):
        failure = payload.get("failure")
        return cls(
            n=int(payload["n"]),
            replication=int(payload["replication"]),
            rows=list(payload.get("rows", [])),
            wall_time=float(payload.get("wall_time", 0.0)),
            failure=ReplicationFailure(**failure) if failure else None,
        )


def fit_configured_harm_model(data, config, seed):
    """The harm model an experiment config asks for, fitted at its first rho."""
    return fit_harm_model(
        data,
        rho=config.rhos[0],
        reference=config.reference_action,
        regressor_kind=config.harm_regressor,
        degree=config.harm_degree,
        ridge=config.harm_ridge,
        mlp_config=replace(config.fqi.mlp, seed=seed) if config.harm_regressor == "mlp" else None,
        variance_floor=config.variance_floor,
    )


def _learn(data, utilities, config, seed):
    q = fqi_train(pool_transitions(data, utilities), replace(config.fqi, seed=seed))
    return GreedyPolicy(q, reference=config.reference_action)


def run_replication(config, n, replication):
    """Run every method for one (N, replication) pair; returns a ReplicationOutcome."""
    started = time.perf_counter()
    spec = config.env
    seed = replication_seed(config.seed, replication)
    methods = set(config.methods)

    data, _ = generate_dataset(spec, n, replication=replication)

    def score(policy):
        result = evaluate_policy(spec, policy, n, spec.horizon, config.gamma, replication, config.reference_action)
        return {
            "disc_outcome": result.discounted_outcome,
            "avg_harm": result.average_harm,
            "avg_harm_indicator_variant": result.average_harm_indicator,
        }

    fixed = {}
    if Method.BEHAVIOR in methods:
        fixed[Method.BEHAVIOR] = score(LogisticBehaviorPolicy())
    if Method.RANDOM in methods:
        fixed[Method.RANDOM] = score(UniformRandomPolicy(n_actions=N_ACTIONS))
    if Method.UNAWARE in methods:
        fixed[Method.UNAWARE] = score(_learn(data, data.outcomes, config, seed))

    harm_model = fit_configured_harm_model(data, config, seed) if Method.HARM_AWARE in methods else None

    rows = []
    for rho in config.rhos:
        for beta in config.betas:
            scores = dict(fixed)
            if harm_model is not None:
                penalty = PenaltyConfig(beta=beta, kind=config.penalty_kind)
                utilities = transform_utilities(data, harm_model.with_rho(rho), penalty)
                scores[Method.HARM_AWARE] = score(_learn(data, utilities, config, seed))
            for method in config.methods:
                rows.append({
                    "method": method.value, "beta": beta, "rho": rho, "N": n, "T": spec.horizon,
                    "replication": replication, "seed": seed, **scores[method],
                })
    return ReplicationOutcome(n=n, replication=replication, rows=rows, wall_time=time.perf_counter() - started)


def guarded_replication(config, n, replication):
    """``run_replication`` with any exception captured as a ReplicationFailure."""
    started = time.perf_counter()
    try:
        return run_replication(config, n, replication)
    except Exception as exc:
        logger.exception("replication N=%d r=%d failed", n, replication)
        failure = ReplicationFailure(n=n, replication=replication, error_type=type(exc).__name__, message=str(exc))
        return ReplicationOutcome(n=n, replication=replication, wall_time=time.perf_counter() - started, failure=failure)


@dataclass
class ExperimentResult:
    config: object
    outcomes: list
    wall_time: float
    offline_rows: list = field(default_factory=list)

    @property
    def rows(self):
        return [row for outcome in self.outcomes for row in outcome.rows]

    @property
    def failures(self):
        return [outcome.failure for outcome in self.outcomes if outcome.failure is not None]

    def frame(self):
        return pd.DataFrame(self.rows, columns=CSV_COLUMNS)

    def summary(self):
        return summarize_replications(self.rows)

    def manifest(self):
        manifest = {
            "name": self.config.name,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash,
            "seed": self.config.seed,
            "versions": {
                "saferl": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
                "scikit-learn": sklearn.__version__,
            },
            "wall_time": self.wall_time,
            "failures": [vars(f) for f in self.failures],
        }
        if self.config.is_offline:
            # one fit on the logged data, no replications
            manifest["model_seed"] = replication_seed(self.config.seed, 0)
        else:
            manifest["replication_seeds"] = {
                str(r): replication_seed(self.config.seed, r) for r in range(self.config.replications)
            }
            manifest["replication_wall_times"] = [
                {"N": o.n, "replication": o.replication, "seconds": o.wall_time} for o in self.outcomes
            ]
        return manifest


def run_experiment(config, threads=1, progress=None):
    """
    Run the full simulation study described by ``config``.

    ``progress(done, total)`` is called as replications finish. With
    ``threads > 1`` replications run in a process pool. Queued runs do not
    come through here: the Celery tasks fan replications out as a chord and
    meet again in ``finish_experiment``.
    """
    if config.is_offline:
        return run_offline_study(config)
    started = time.perf_counter()
    jobs = simulation_jobs(config)
    logger.info("Running %s: %d replications x %d sample sizes (config %s)",
                config.name, config.replications, len(config.sample_sizes), config.config_hash[:12])

    outcomes = []
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(guarded_replication, config, n, r) for n, r in jobs]
            for done, future in enumerate(futures, start=1):
                outcomes.append(future.result())
                if progress:
                    progress(done, len(jobs))
    else:
        for done, (n, r) in enumerate(jobs, start=1):
            outcomes.append(guarded_replication(config, n, r))
            if progress:
                progress(done, len(jobs))

    return finish_experiment(config, outcomes, time.perf_counter() - started)


def simulation_jobs(config):
    """Every (N, replication) pair of a simulation study, in result order."""
    return [(n, r) for n in config.sample_sizes for r in range(config.replications)]


def finish_experiment(config, outcomes, wall_time):
    """
    Collect replication outcomes into an ExperimentResult, or raise
    ExperimentAborted when too many of them failed.
    """
    outcomes = sorted(outcomes, key=lambda o: (config.sample_sizes.index(o.n), o.replication))
    result = ExperimentResult(config=config, outcomes=outcomes, wall_time=wall_time)
    failures = result.failures
    total = len(outcomes)
    if failures:
        logger.warning("%d of %d replications failed", len(failures), total)
    if failures and len(failures) >= ABORT_FAILURE_FRACTION * total:
        raise ExperimentAborted(
            f"{len(failures)} of {total} replications failed; first error: "
            f"{failures[0].error_type}: {failures[0].message}",
            failures=failures,
        )
    logger.info("Finished %s in %.1fs", config.name, result.wall_time)
    return result


def summarize_replications(rows):
    """
    Mean, sample standard deviation, standard error and count of every metric
    per (method, beta, rho, N). A single replication has std 0; groups without
    any finite value are omitted with a warning.
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=CSV_COLUMNS)
    columns = GROUP_KEYS + ["count"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std", "se")]
    if frame.empty:
        logger.warning("no replication rows to summarise")
        return pd.DataFrame(columns=columns)

    all_groups = set(frame.groupby(GROUP_KEYS).groups)
    valid = frame.dropna(subset=list(METRICS), how="all")
    omitted = all_groups - set(valid.groupby(GROUP_KEYS).groups) if not valid.empty else all_groups
    for key in sorted(omitted):
        logger.warning("omitting empty group %s", dict(zip(GROUP_KEYS, key)))
    if valid.empty:
        return pd.DataFrame(columns=columns)

    grouped = valid.groupby(GROUP_KEYS, sort=True)
    summary = grouped.size().rename("count").to_frame()
    for metric in METRICS:
        stats = grouped[metric].agg(["mean", "std", "count"])
        std = stats["std"].where(stats["count"] > 1, 0.0)
        summary[f"{metric}_mean"] = stats["mean"]
        summary[f"{metric}_std"] = std
        summary[f"{metric}_se"] = std / np.sqrt(stats["count"])
    return summary.reset_index()[columns]


def run_offline_study(config):
    """
    Sensitivity study on a logged dataset: for every (rho, beta) learn the
    harm-aware policy and report WIS outcome and harm for each method.
    """
    started = time.perf_counter()
    source = config.data
    data = load_longitudinal_csv(source.path, source.schema, source.mapping, source.allow_unseen_actions)
    config.check_reference_action(data.n_actions)
    behavior = estimate_behavior_policy(data, config.behavior_model, config.probability_floor)
    seed = replication_seed(config.seed, 0)
    harm_model = fit_configured_harm_model(data, config, seed)

    policies = {}
    if Method.BEHAVIOR in config.methods:
        policies[Method.BEHAVIOR] = behavior
    if Method.RANDOM in config.methods:
        policies[Method.RANDOM] = UniformRandomPolicy(n_actions=data.n_actions)
    if Method.UNAWARE in config.methods:
        policies[Method.UNAWARE] = _learn(data, data.outcomes, config, seed)

    rows = []
    for rho in config.rhos:
        model = harm_model.with_rho(rho)
        for beta in config.betas:
            candidates = dict(policies)
            if Method.HARM_AWARE in config.methods:
                utilities = transform_utilities(data, model, PenaltyConfig(beta=beta, kind=config.penalty_kind))
                candidates[Method.HARM_AWARE] = _learn(data, utilities, config, seed)
            for method in config.methods:
                policy = candidates[method]
                report = evaluate_offline(data, policy, behavior, model, config.penalty_kind)
                row = {
                    "method": method.value, "beta": beta, "rho": rho, "N": data.n_individuals,
                    "T": data.horizon, "seed": seed, **report.as_dict(),
                }
                if config.bootstrap:
                    row["wis_outcome_se"] = bootstrap_standard_error(
                        data, lambda d, p=policy: wis_outcome(d, p, behavior), config.bootstrap, seed)
                    row["wis_harm_se"] = bootstrap_standard_error(
                        data, lambda d, p=policy, m=model: wis_harm(d, p, behavior, m, config.penalty_kind),
                        config.bootstrap, seed)
                rows.append(row)
                logger.info("%s rho=%.2f beta=%.2f: WIS outcome %.4f, WIS harm %.4f (matched %.1f%%)",
                            method.value, rho, beta, report.wis_outcome, report.wis_harm,
                            100 * report.matched_fraction)
    return ExperimentResult(config=config, outcomes=[], wall_time=time.perf_counter() - started, offline_rows=rows)


def write_results(result, out_dir):
    """Write the result files of one run; returns their paths by name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"manifest": out_dir / "manifest.json"}
    if result.config.is_offline:
        paths["offline"] = out_dir / "offline.csv"
        frame = pd.DataFrame(result.offline_rows)
        extra = [c for c in frame.columns if c not in OFFLINE_COLUMNS]
        frame.reindex(columns=OFFLINE_COLUMNS + extra).to_csv(paths["offline"], index=False)
    else:
        paths["replications"] = out_dir / "replications.csv"
        paths["aggregate"] = out_dir / "aggregate.csv"
        result.frame().to_csv(paths["replications"], index=False)
        result.summary().to_csv(paths["aggregate"], index=False)
    with open(paths["manifest"], "w") as f:
        json.dump(result.manifest(), f, indent=2, sort_keys=True, default=_json_default)
    logger.info("Results written to %s", out_dir)
    return paths


def _json_default(value):
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    return str(value)

import time
from pathlib import Path

from celery import chord, shared_task
from celery.utils.log import get_task_logger
from django.conf import settings

from .experiment_config import parse_experiment_config
from .harness import (
    ReplicationOutcome, finish_experiment, guarded_replication, run_offline_study, simulation_jobs, write_results,
)
from .models import AuditLog, ExperimentRun

logger = get_task_logger(__name__)


def run_output_dir(run, config):
    if run.output_dir:
        return Path(run.output_dir)
    if config.output_dir:
        return Path(config.output_dir)
    return Path(settings.SAFERL_OUTPUT_DIR) / f"run-{run.pk}-{config.config_hash[:8]}"


def _store_result(run, config, result):
    t0 = time.time()
    out_dir = run_output_dir(run, config)
    write_results(result, out_dir)
    stored = run.record_result(result, out_dir)
    logger.info("  [%s] %d rows stored in %.2fs", run.name, stored, time.time() - t0)
    AuditLog.objects.create(
        action="Experiment Finished", target=run.name,
        details=f"{stored} rows, {len(result.failures)} failed replications, output in {out_dir}",
    )


def _fail(run, error):
    run.mark_failed(error)
    AuditLog.objects.create(action="Experiment Failed", target=run.name, details=f"{type(error).__name__}: {error}")


@shared_task
def run_experiment_task(run_id):
    """
    Executes a stored ExperimentRun. A simulation study fans out as a chord of
    one task per (N, replication), collected by ``collect_replications_task``;
    an offline study is a single fit and runs here.
    """
    task_start = time.time()
    logger.info(">>> STARTING EXPERIMENT RUN %s", run_id)

    try:
        run = ExperimentRun.objects.get(pk=run_id)
    except ExperimentRun.DoesNotExist:
        logger.error("Experiment run %s does not exist", run_id)
        return

    run.mark_running()
    AuditLog.objects.create(action="Experiment Started", target=run.name, details=f"run {run.pk}, seed {run.seed}")
    try:
        config = parse_experiment_config(run.config)
        if config.is_offline:
            result = run_offline_study(config)
            logger.info("  [%s] %d offline rows computed in %.2fs", run.name, len(result.offline_rows),
                        time.time() - task_start)
            _store_result(run, config, result)
        else:
            jobs = simulation_jobs(config)
            logger.info("  [%s] queueing %d replications", run.name, len(jobs))
            header = [run_replication_task.s(run.pk, n, r) for n, r in jobs]
            chord(header)(collect_replications_task.s(run.pk, task_start))
    except Exception as e:
        logger.exception("Experiment run %s failed", run_id)
        _fail(run, e)

    logger.info("<<< FINISHED EXPERIMENT RUN %s (Total: %.2fs)", run_id, time.time() - task_start)


@shared_task
def run_replication_task(run_id, n, replication):
    """One (N, replication) of a stored run; failures come back as data, never as task errors."""
    run = ExperimentRun.objects.get(pk=run_id)
    config = parse_experiment_config(run.config)
    outcome = guarded_replication(config, n, replication)
    logger.info("  [%s] N=%d replication %d done in %.2fs%s", run.name, n, replication, outcome.wall_time,
                " (failed)" if outcome.failure else "")
    return outcome.to_dict()


@shared_task
def collect_replications_task(outcomes, run_id, started):
    """Chord callback: apply the abort rule, then write and store the results."""
    run = ExperimentRun.objects.get(pk=run_id)
    try:
        config = parse_experiment_config(run.config)
        result = finish_experiment(
            config, [ReplicationOutcome.from_dict(o) for o in outcomes], time.time() - started,
        )
        _store_result(run, config, result)
    except Exception as e:
        logger.exception("Experiment run %s failed", run_id)
        _fail(run, e)
    logger.info("<<< COLLECTED EXPERIMENT RUN %s (Total: %.2fs)", run_id, time.time() - started)

import time

from django.utils import timezone

from saferl.exceptions import ExperimentAborted
from saferl.fqi import FqiMode
from saferl.harness import run_experiment, write_results
from saferl.models import AuditLog, ExperimentRun

from ._base import SaferlCommand


class Command(SaferlCommand):
    help = 'Runs a full replication study and records it as an experiment run'
    default_out = 'replicate'

    def add_command_arguments(self, parser):
        parser.add_argument('--fqi-mode', choices=[m.value for m in FqiMode], help='Override the FQI schedule')
        parser.add_argument('--replications', type=int, help='Override the number of replications')
        parser.add_argument('--sample-sizes', type=int, nargs='+', help='Override the sample size grid')

    def run(self, config, options):
        config = config.with_overrides(
            fqi_mode=options['fqi_mode'],
            replications=options['replications'],
            sample_sizes=options['sample_sizes'],
        )
        out_dir = self.output_dir(config, options)
        run = ExperimentRun.objects.create(
            name=config.name, config=config.to_dict(), config_hash=config.config_hash,
            seed=config.seed, threads=options['threads'], output_dir=str(out_dir),
        )
        run.mark_running()
        AuditLog.objects.create(action="Experiment Started", target=run.name, details=f"run {run.pk}, seed {run.seed}")
        self.stdout.write(f'Run {run.pk}: {config.name} (config {config.config_hash[:12]}, seed {config.seed})')

        start = time.time()
        try:
            result = run_experiment(config, threads=options['threads'], progress=self.progress)
        except ExperimentAborted as e:
            run.mark_failed(e)
            AuditLog.objects.create(action="Experiment Failed", target=run.name, details=str(e))
            raise

        paths = write_results(result, out_dir)
        stored = run.record_result(result, out_dir)
        AuditLog.objects.create(
            action="Experiment Finished", target=run.name,
            details=f"{stored} rows, {len(result.failures)} failed replications, output in {out_dir}",
        )

        for failure in result.failures:
            self.stdout.write(self.style.WARNING(
                f'Replication N={failure.n} r={failure.replication} failed: {failure.error_type}: {failure.message}'
            ))
        for name, path in paths.items():
            self.stdout.write(f'  {name}: {path}')
        self.stdout.write(self.style.SUCCESS(
            f'Run {run.pk} finished at {timezone.now():%Y-%m-%d %H:%M:%S}: {stored} rows in {time.time() - start:.1f}s'
        ))

    def progress(self, done, total):
        if done == total or done % max(1, total // 10) == 0:
            self.stdout.write(f'  {done}/{total} replications')

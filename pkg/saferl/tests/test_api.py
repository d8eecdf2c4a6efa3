import tempfile
import time
from pathlib import Path
from unittest import mock

from rest_framework import status
from rest_framework.test import APITestCase

from config.celery import app as celery_app
from saferl.experiment_config import parse_experiment_config
from saferl.harness import ReplicationFailure, ReplicationOutcome
from saferl.models import AuditLog, ExperimentRun
from saferl.tasks import collect_replications_task, run_experiment_task

SMALL_CONFIG = {
    'experiment': {'name': 'api-test', 'betas': [0.5], 'sample_sizes': [20], 'replications': 2, 'seed': 4},
    'env': {'horizon': 4},
    'fqi': {'iterations': 8},
}


def stored_run(output_dir=''):
    config = parse_experiment_config(SMALL_CONFIG)
    return ExperimentRun.objects.create(
        name=config.name, config=config.to_dict(), config_hash=config.config_hash, seed=config.seed,
        output_dir=str(output_dir),
    )


class ExperimentRunApiTests(APITestCase):
    @mock.patch('saferl.api.run_experiment_task.delay')
    def test_create_queues_run(self, delay):
        response = self.client.post('/api/v1/runs/', {'config': SMALL_CONFIG, 'seed': 11}, format='json')
        self.assertEqual(response.status_code, status.HTTP_201_CREATED)
        run = ExperimentRun.objects.get()
        self.assertEqual(response.data['id'], run.pk)
        self.assertEqual(run.name, 'api-test')
        self.assertEqual(run.seed, 11)
        self.assertEqual(run.status, 'pending')
        self.assertEqual(run.config['experiment']['seed'], 11)
        delay.assert_called_once_with(run.pk)
        self.assertTrue(AuditLog.objects.filter(action='Experiment Queued').exists())

    @mock.patch('saferl.api.run_experiment_task.delay')
    def test_invalid_config_is_rejected(self, delay):
        response = self.client.post('/api/v1/runs/', {'config': {'harm': {'rho': 2.0}}}, format='json')
        self.assertEqual(response.status_code, status.HTTP_400_BAD_REQUEST)
        self.assertIn('config', response.data)
        self.assertFalse(ExperimentRun.objects.exists())
        delay.assert_not_called()

    def test_list_and_retrieve(self):
        run = stored_run()
        listing = self.client.get('/api/v1/runs/')
        self.assertEqual(listing.status_code, status.HTTP_200_OK)
        self.assertEqual([r['id'] for r in listing.data], [run.pk])
        detail = self.client.get(f'/api/v1/runs/{run.pk}/')
        self.assertEqual(detail.data['config_hash'], run.config_hash)
        self.assertEqual(self.client.get('/api/v1/runs/999/').status_code, status.HTTP_404_NOT_FOUND)


class RunExperimentTaskTests(APITestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        # replication chords run inline
        self._eager = celery_app.conf.task_always_eager
        celery_app.conf.task_always_eager = True

    def tearDown(self):
        celery_app.conf.task_always_eager = self._eager
        self._tmp.cleanup()

    def test_task_runs_study_and_serves_results(self):
        run = stored_run(self.tmp / 'run')
        run_experiment_task(run.pk)
        run.refresh_from_db()
        self.assertEqual(run.status, 'finished')
        self.assertIsNotNone(run.wall_time)
        self.assertTrue((self.tmp / 'run' / 'replications.csv').exists())

        results = self.client.get(f'/api/v1/runs/{run.pk}/results/')
        self.assertEqual(len(results.data), 2 * 4)
        self.assertEqual({r['method'] for r in results.data}, {'harm-aware', 'unaware', 'behavior', 'random'})

        summary = self.client.get(f'/api/v1/runs/{run.pk}/summary/')
        self.assertEqual(summary.status_code, status.HTTP_200_OK)
        self.assertEqual(len(summary.data), 4)
        self.assertTrue(all(row['count'] == 2 for row in summary.data))

    def test_failed_task_marks_run(self):
        config = parse_experiment_config({
            'experiment': {'sample_sizes': [3], 'replications': 2, 'methods': ['unaware']},
            'env': {'horizon': 2},
            'fqi': {'mode': 'batched', 'iterations': 50},
        })
        run = ExperimentRun.objects.create(name='doomed', config=config.to_dict(), output_dir=str(self.tmp))
        run_experiment_task(run.pk)
        run.refresh_from_db()
        self.assertEqual(run.status, 'failed')
        self.assertIn('replications failed', run.error.lower())
        self.assertTrue(AuditLog.objects.filter(action='Experiment Failed', target='doomed').exists())

    def test_missing_run_is_ignored(self):
        self.assertIsNone(run_experiment_task(12345))

    @mock.patch('saferl.tasks.chord')
    def test_simulation_fans_out_one_task_per_replication(self, chord):
        run = stored_run(self.tmp / 'run')
        run_experiment_task(run.pk)
        header = chord.call_args[0][0]
        self.assertEqual([task.args for task in header], [(run.pk, 20, 0), (run.pk, 20, 1)])
        callback = chord.return_value.call_args[0][0]
        self.assertEqual(callback.task, 'saferl.tasks.collect_replications_task')
        run.refresh_from_db()
        self.assertEqual(run.status, 'running')

    def test_offline_run_is_not_fanned_out(self):
        csv_path = self.tmp / 'logged.csv'
        rows = ['id,t,x_1,a,y'] + [f'{i},{t},{0.1 * t},{(i + t) % 2},{0.5 * t}' for i in range(12) for t in range(4)]
        csv_path.write_text('\n'.join(rows) + '\n')
        config = parse_experiment_config({
            'experiment': {'betas': [0.5], 'methods': ['behavior', 'random']},
            'data': {'path': str(csv_path)},
        })
        run = ExperimentRun.objects.create(name='offline', config=config.to_dict(), output_dir=str(self.tmp / 'out'))
        with mock.patch('saferl.tasks.chord') as chord:
            run_experiment_task(run.pk)
        chord.assert_not_called()
        run.refresh_from_db()
        self.assertEqual(run.status, 'finished')
        self.assertEqual(run.results.count(), 2)
        self.assertTrue((self.tmp / 'out' / 'offline.csv').exists())

    def test_collect_keeps_partial_failures(self):
        run = stored_run(self.tmp / 'run')
        row = {'method': 'random', 'beta': 0.5, 'rho': 1.0, 'N': 20, 'T': 4, 'replication': 0, 'seed': 1,
               'disc_outcome': 1.0, 'avg_harm': 0.1, 'avg_harm_indicator_variant': 0.1}
        outcomes = [
            ReplicationOutcome(n=20, replication=r, rows=[{**row, 'replication': r}], wall_time=0.1).to_dict()
            for r in range(3)
        ]
        failure = ReplicationFailure(n=20, replication=3, error_type='ShapeError', message='too few rows')
        outcomes.append(ReplicationOutcome(n=20, replication=3, failure=failure).to_dict())

        collect_replications_task(outcomes, run.pk, time.time())
        run.refresh_from_db()
        self.assertEqual(run.status, 'finished')
        self.assertEqual(run.results.count(), 3)
        self.assertTrue(AuditLog.objects.filter(action='Replication Failed', details__contains='too few rows').exists())

    def test_collect_aborts_when_half_failed(self):
        run = stored_run(self.tmp / 'run')
        failure = ReplicationFailure(n=20, replication=0, error_type='ShapeError', message='too few rows')
        outcomes = [
            ReplicationOutcome(n=20, replication=0, failure=failure).to_dict(),
            ReplicationOutcome(n=20, replication=1).to_dict(),
        ]
        collect_replications_task(outcomes, run.pk, time.time())
        run.refresh_from_db()
        self.assertEqual(run.status, 'failed')
        self.assertIn('1 of 2 replications failed', run.error)

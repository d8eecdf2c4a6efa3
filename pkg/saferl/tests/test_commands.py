import json
import tempfile
from io import StringIO
from pathlib import Path

import pandas as pd
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from saferl.harness import CSV_COLUMNS
from saferl.models import AuditLog, ExperimentRun

SMALL_CONFIG = """
experiment:
  name: command-test
  betas: [0.0, 0.5]
  sample_sizes: [25]
  replications: 2
  seed: 1
env:
  horizon: 4
fqi:
  iterations: 8
"""


class CommandTestCase(TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)
        self.config = self.tmp / 'small.yaml'
        self.config.write_text(SMALL_CONFIG)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, *args):
        out = StringIO()
        call_command(*args, '--config', str(self.config), stdout=out)
        return out.getvalue()


class PipelineCommandTests(CommandTestCase):
    def test_simulate_fit_train_evaluate_ope(self):
        out_dir = self.tmp / 'run'
        self.call('simulate', '--out', str(out_dir))
        dataset = pd.read_csv(out_dir / 'dataset.csv')
        self.assertEqual(list(dataset.columns), ['id', 't', 'x_1', 'a', 'y'])
        self.assertEqual(len(dataset), 25 * 5)
        counterfactual = pd.read_csv(out_dir / 'counterfactual.csv')
        self.assertEqual(list(counterfactual.columns), ['id', 't', 'y0', 'y1'])
        self.assertEqual(len(counterfactual), 25 * 5)

        data = str(out_dir / 'dataset.csv')
        self.call('fit_harm', '--data', data, '--out', str(out_dir))
        harm_model = json.loads((out_dir / 'harm_model.json').read_text())
        self.assertEqual(harm_model['rho'], 1.0)

        self.call('train', '--data', data, '--harm-model', str(out_dir / 'harm_model.json'),
                  '--beta', '0.5', '--out', str(out_dir))
        policy = json.loads((out_dir / 'policy.json').read_text())
        self.assertEqual(policy['type'], 'greedy')
        self.assertEqual(policy['method'], 'harm-aware')
        self.assertEqual(policy['beta'], 0.5)

        output = self.call('evaluate', '--policy', str(out_dir / 'policy.json'), '--out', str(out_dir))
        evaluation = json.loads((out_dir / 'evaluation.json').read_text())
        self.assertEqual(evaluation['N'], 25)
        self.assertIn('disc_outcome', evaluation)
        self.assertIn('avg_harm', output)

        self.call('ope', '--data', data, '--policy', str(out_dir / 'policy.json'),
                  '--harm-model', str(out_dir / 'harm_model.json'), '--out', str(out_dir))
        report = json.loads((out_dir / 'ope.json').read_text())
        self.assertEqual(set(report), {'wis_outcome', 'wis_harm', 'matched_fraction'})

    def test_simulate_is_reproducible(self):
        self.call('simulate', '--out', str(self.tmp / 'a'), '--seed', '7')
        self.call('simulate', '--out', str(self.tmp / 'b'), '--seed', '7')
        self.assertEqual((self.tmp / 'a' / 'dataset.csv').read_bytes(), (self.tmp / 'b' / 'dataset.csv').read_bytes())

    def test_train_unaware_with_batched_schedule(self):
        self.call('simulate', '--out', str(self.tmp))
        self.call('train', '--data', str(self.tmp / 'dataset.csv'), '--method', 'unaware',
                  '--fqi-mode', 'batched', '--out', str(self.tmp))
        policy = json.loads((self.tmp / 'policy.json').read_text())
        self.assertEqual(policy['fqi']['mode'], 'batched')
        self.assertIsNone(policy['rho'])

    def test_evaluate_builtin_policy(self):
        output = self.call('evaluate', '--builtin', 'random', '--n', '40', '--out', str(self.tmp))
        self.assertEqual(json.loads((self.tmp / 'evaluation.json').read_text())['policy'], 'random')
        self.assertIn('Evaluation written', output)


class ReplicateCommandTests(CommandTestCase):
    def test_replicate_records_run(self):
        out_dir = self.tmp / 'study'
        self.call('replicate', '--out', str(out_dir))
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, 'finished')
        self.assertEqual(run.name, 'command-test')
        self.assertEqual(run.results.count(), 2 * 2 * 4)
        self.assertEqual(run.output_dir, str(out_dir))
        self.assertEqual(list(pd.read_csv(out_dir / 'replications.csv').columns), CSV_COLUMNS)
        self.assertTrue((out_dir / 'aggregate.csv').exists())
        self.assertTrue((out_dir / 'manifest.json').exists())
        self.assertEqual(
            list(AuditLog.objects.order_by('id').values_list('action', flat=True)),
            ['Experiment Started', 'Experiment Finished'],
        )

    def test_overrides(self):
        self.call('replicate', '--out', str(self.tmp), '--replications', '1', '--sample-sizes', '20', '--seed', '5')
        run = ExperimentRun.objects.get()
        self.assertEqual(run.seed, 5)
        self.assertEqual(run.results.count(), 2 * 4)
        self.assertEqual(set(run.results.values_list('n', flat=True)), {20})


class ExitCodeTests(CommandTestCase):
    def test_missing_config_exits_with_config_error(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('simulate', '--config', str(self.tmp / 'absent.yaml'), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_invalid_config_exits_with_config_error(self):
        self.config.write_text('harm:\n  rho: 3.0\n')
        with self.assertRaises(CommandError) as ctx:
            self.call('simulate', '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_missing_dataset_exits_with_config_error(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('fit_harm', '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_runtime_failure_exits_with_three(self):
        bad = self.tmp / 'ragged.csv'
        pd.DataFrame({'id': [1, 1, 2], 't': [0, 1, 0], 'x_1': [0.0] * 3, 'a': [0, 1, 0], 'y': [0.0] * 3}).to_csv(
            bad, index=False)
        with self.assertRaises(CommandError) as ctx:
            self.call('fit_harm', '--data', str(bad), '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 3)

    def test_aborted_study_exits_with_three_and_marks_run_failed(self):
        self.config.write_text(
            'experiment:\n  sample_sizes: [3]\n  replications: 2\n  methods: [unaware]\n'
            'env:\n  horizon: 2\nfqi:\n  mode: batched\n  iterations: 50\n'
        )
        with self.assertRaises(CommandError) as ctx:
            self.call('replicate', '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertEqual(ExperimentRun.objects.get().status, 'failed')

    def test_malformed_csv_exits_with_three(self):
        bad = self.tmp / 'malformed.csv'
        bad.write_text('id,t,x_1,a,y\n1,0,0.5,0,1.0\n1,1,abc,1,2.0\n')
        with self.assertRaises(CommandError) as ctx:
            self.call('fit_harm', '--data', str(bad), '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn("'x_1'", str(ctx.exception))

    def test_reference_action_outside_logged_actions_exits_with_two(self):
        self.call('simulate', '--out', str(self.tmp))
        self.config.write_text('data:\n  action_mapping:\n    n_actions: 2\nharm:\n  reference_action: 1\n')
        self.call('fit_harm', '--data', str(self.tmp / 'dataset.csv'), '--out', str(self.tmp))
        self.config.write_text('data:\n  path: ' + str(self.tmp / 'dataset.csv') + '\nharm:\n  reference_action: 2\n')
        with self.assertRaises(CommandError) as ctx:
            self.call('fit_harm', '--out', str(self.tmp))
        self.assertEqual(ctx.exception.returncode, 2)

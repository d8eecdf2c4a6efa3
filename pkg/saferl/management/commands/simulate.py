from saferl.data import write_longitudinal_csv
from saferl.envs import generate_dataset

from ._base import SaferlCommand


class Command(SaferlCommand):
    help = 'Simulates a logged behaviour dataset plus its hidden counterfactual outcomes'
    default_out = 'simulate'

    def add_command_arguments(self, parser):
        parser.add_argument('--n', type=int, help='Number of individuals (default: first configured sample size)')
        parser.add_argument('--replication', type=int, default=0, help='Replication index selecting the noise stream')

    def run(self, config, options):
        n = options['n'] or config.sample_sizes[0]
        data, counterfactual = generate_dataset(config.env, n, replication=options['replication'])

        out_dir = self.output_dir(config, options)
        dataset_path = write_longitudinal_csv(data, out_dir / 'dataset.csv')
        counterfactual.to_frame(data.individual_ids).to_csv(out_dir / 'counterfactual.csv', index=False)

        self.stdout.write(self.style.SUCCESS(
            f'Simulated {config.env.kind.value} env: N={n}, T={config.horizon}, seed={config.seed} -> {dataset_path}'
        ))
        self.stdout.write(f'Counterfactual outcomes -> {out_dir / "counterfactual.csv"}')

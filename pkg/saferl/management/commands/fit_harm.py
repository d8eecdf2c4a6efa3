from saferl.harness import fit_configured_harm_model, replication_seed

from ._base import SaferlCommand


class Command(SaferlCommand):
    help = 'Fits the per-action outcome mean and variance models used by the harm penalty'
    default_out = 'fit_harm'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Longitudinal CSV (default: [data] path from the config)')
        parser.add_argument('--rho', type=float, help='Copula correlation stored with the model (default: first configured rho)')

    def run(self, config, options):
        data = self.load_dataset(config, options)
        model = fit_configured_harm_model(data, config, replication_seed(config.seed, 0))
        if options['rho'] is not None:
            model = model.with_rho(options['rho'])
        path = self.write_json(model.to_dict(), self.output_dir(config, options) / 'harm_model.json')
        self.stdout.write(self.style.SUCCESS(
            f'Harm model fitted on N={data.n_individuals}, T={data.horizon}, |A|={data.n_actions} '
            f'(rho={model.rho}) -> {path}'
        ))

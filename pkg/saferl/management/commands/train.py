from dataclasses import replace

from saferl.data import pool_transitions
from saferl.exceptions import ConfigError
from saferl.experiment_config import Method
from saferl.fqi import FqiMode, GreedyPolicy, empirical_action_gap, fqi_train
from saferl.harm import HarmModel, PenaltyConfig, transform_utilities
from saferl.harness import fit_configured_harm_model, replication_seed

from ._base import SaferlCommand


class Command(SaferlCommand):
    help = 'Learns a greedy policy by fitted Q-iteration on a logged dataset'
    default_out = 'train'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Longitudinal CSV (default: [data] path from the config)')
        parser.add_argument('--harm-model', help='harm_model.json from fit_harm (fitted on the fly when omitted)')
        parser.add_argument('--beta', type=float, help='Harm penalty weight (default: first configured beta)')
        parser.add_argument('--rho', type=float, help='Override the copula correlation of the harm model')
        parser.add_argument('--method', choices=[Method.HARM_AWARE.value, Method.UNAWARE.value],
                            default=Method.HARM_AWARE.value)
        parser.add_argument('--fqi-mode', choices=[m.value for m in FqiMode], help='Override the FQI schedule')

    def run(self, config, options):
        if options['fqi_mode']:
            config = config.with_overrides(fqi_mode=options['fqi_mode'])
        data = self.load_dataset(config, options)
        beta = config.betas[0] if options['beta'] is None else options['beta']
        if beta < 0:
            raise ConfigError(f'--beta must be nonnegative, got {beta}')
        seed = replication_seed(config.seed, 0)

        harm_model = None
        if options['method'] == Method.UNAWARE.value:
            utilities = data.outcomes
        else:
            harm_model = self.harm_model(data, config, options, seed)
            utilities = transform_utilities(data, harm_model, PenaltyConfig(beta=beta, kind=config.penalty_kind))

        q = fqi_train(pool_transitions(data, utilities), replace(config.fqi, seed=seed))
        policy = GreedyPolicy(q, reference=config.reference_action)
        gaps = empirical_action_gap(q, data.flat_states())

        payload = {
            **policy.to_dict(),
            'method': options['method'],
            'beta': beta,
            'rho': harm_model.rho if harm_model is not None else None,
            'fqi': config.to_dict()['fqi'],
            'zero_gap_fraction': gaps.zero_gap_fraction,
        }
        path = self.write_json(payload, self.output_dir(config, options) / 'policy.json')
        self.stdout.write(self.style.SUCCESS(
            f'{options["method"]} policy (beta={beta}) trained in {q.iterations_run} FQI rounds -> {path}'
        ))
        if gaps.zero_gap_fraction > 0.5:
            self.stdout.write(self.style.WARNING(
                f'{100 * gaps.zero_gap_fraction:.0f}% of logged states have tied action values'
            ))

    def harm_model(self, data, config, options, seed):
        if options['harm_model']:
            model = HarmModel.from_dict(self.read_json(options['harm_model'], 'harm model'))
        else:
            model = fit_configured_harm_model(data, config, seed)
        if options['rho'] is not None:
            model = model.with_rho(options['rho'])
        return model

import json

from saferl.harm import HarmModel
from saferl.harness import replication_seed
from saferl.ope import (
    bootstrap_standard_error, estimate_behavior_policy, evaluate_offline, wis_harm, wis_outcome,
)
from saferl.policies import policy_from_dict

from ._base import SaferlCommand


class Command(SaferlCommand):
    help = 'Weighted importance sampling estimates of outcome and harm for a policy on logged data'
    default_out = 'ope'

    def add_command_arguments(self, parser):
        parser.add_argument('--data', help='Longitudinal CSV (default: [data] path from the config)')
        parser.add_argument('--policy', required=True, help='policy.json written by train')
        parser.add_argument('--harm-model', required=True, help='harm_model.json written by fit_harm')
        parser.add_argument('--bootstrap', type=int, help='Bootstrap resamples for standard errors (default: [ope] bootstrap)')

    def run(self, config, options):
        data = self.load_dataset(config, options)
        policy = policy_from_dict(self.read_json(options['policy'], 'policy'))
        harm_model = HarmModel.from_dict(self.read_json(options['harm_model'], 'harm model'))
        behavior = estimate_behavior_policy(data, config.behavior_model, config.probability_floor)

        report = evaluate_offline(data, policy, behavior, harm_model, config.penalty_kind)
        payload = report.as_dict()

        n_boot = config.bootstrap if options['bootstrap'] is None else options['bootstrap']
        if n_boot:
            seed = replication_seed(config.seed, 0)
            payload['wis_outcome_se'] = bootstrap_standard_error(
                data, lambda d: wis_outcome(d, policy, behavior), n_boot, seed)
            payload['wis_harm_se'] = bootstrap_standard_error(
                data, lambda d: wis_harm(d, policy, behavior, harm_model, config.penalty_kind), n_boot, seed)

        self.write_json(payload, self.output_dir(config, options) / 'ope.json')
        self.stdout.write(json.dumps(payload, indent=2))
        if report.matched_fraction < 0.05:
            self.stdout.write(self.style.WARNING(
                f'Only {100 * report.matched_fraction:.1f}% of logged actions match the policy; estimates are noisy'
            ))

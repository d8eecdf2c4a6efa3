import json

from saferl.envs import evaluate_policy
from saferl.policies import LogisticBehaviorPolicy, UniformRandomPolicy, policy_from_dict

from ._base import SaferlCommand

BUILTIN_POLICIES = {
    'behavior': LogisticBehaviorPolicy,
    'random': lambda: UniformRandomPolicy(n_actions=2),
}


class Command(SaferlCommand):
    help = 'Scores a policy on fresh rollouts of the simulated environment'
    default_out = 'evaluate'

    def add_command_arguments(self, parser):
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--policy', help='policy.json written by train')
        source.add_argument('--builtin', choices=sorted(BUILTIN_POLICIES), help='Score a reference policy instead')
        parser.add_argument('--n', type=int, help='Evaluation individuals (default: first configured sample size)')
        parser.add_argument('--replication', type=int, default=0, help='Replication index selecting the noise stream')

    def run(self, config, options):
        if options['policy']:
            policy = policy_from_dict(self.read_json(options['policy'], 'policy'))
            label = options['policy']
        else:
            policy = BUILTIN_POLICIES[options['builtin']]()
            label = options['builtin']

        n = options['n'] or config.sample_sizes[0]
        result = evaluate_policy(
            config.env, policy, n, config.horizon, config.gamma, options['replication'], config.reference_action,
        )
        payload = {'policy': label, 'N': n, 'T': config.horizon, 'seed': config.seed, **result.as_dict()}
        path = self.write_json(payload, self.output_dir(config, options) / 'evaluation.json')

        self.stdout.write(json.dumps(payload, indent=2))
        self.stdout.write(self.style.SUCCESS(f'Evaluation written to {path}'))

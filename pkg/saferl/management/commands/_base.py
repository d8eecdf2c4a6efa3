import json
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from saferl.data import load_longitudinal_csv
from saferl.exceptions import ConfigError, SaferlError
from saferl.experiment_config import load_experiment_config, parse_experiment_config

CONFIG_ERROR_EXIT = 2
RUNTIME_ERROR_EXIT = 3


class SaferlCommand(BaseCommand):
    """
    Shared flags (--config, --seed, --out, --threads) and exit codes:
    0 on success, 2 for configuration errors, 3 for runtime failures.
    Subclasses implement ``run(config, options)``.
    """
    default_out = 'out'

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Experiment config (YAML); defaults apply when omitted')
        parser.add_argument('--seed', type=int, help='Override the master seed')
        parser.add_argument('--out', help='Output directory')
        parser.add_argument('--threads', type=int, default=settings.SAFERL_THREADS,
                            help='Parallel replications (process pool when > 1)')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def handle(self, *args, **options):
        try:
            config = self.load_config(options)
            self.run(config, options)
        except ConfigError as e:
            raise CommandError(f"Configuration error: {e}", returncode=CONFIG_ERROR_EXIT)
        except SaferlError as e:
            raise CommandError(f"{type(e).__name__}: {e}", returncode=RUNTIME_ERROR_EXIT)

    def run(self, config, options):
        raise NotImplementedError

    def load_config(self, options):
        if options.get('config'):
            config = load_experiment_config(options['config'])
        else:
            config = parse_experiment_config({})
        if options.get('seed') is not None:
            config = config.with_overrides(seed=options['seed'])
        if options['threads'] < 1:
            raise ConfigError("--threads must be at least 1")
        return config

    def output_dir(self, config, options):
        if options.get('out'):
            path = Path(options['out'])
        elif config.output_dir:
            path = Path(config.output_dir)
        else:
            path = Path(settings.SAFERL_OUTPUT_DIR) / self.default_out
        path.mkdir(parents=True, exist_ok=True)
        return path

    def load_dataset(self, config, options):
        """The logged dataset named by --data, or by the config's [data] table."""
        path = options.get('data') or (config.data.path if config.data else None)
        if not path:
            raise ConfigError("no dataset: pass --data or set [data] path in the config")
        if not Path(path).exists():
            raise ConfigError(f"dataset not found: {path}")
        data = load_longitudinal_csv(path, config.schema, config.mapping, config.allow_unseen_actions)
        config.check_reference_action(data.n_actions)
        return data

    def read_json(self, path, what):
        try:
            with open(path) as f:
                return json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"{what} file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{what} file {path} is not valid JSON: {e}")

    def write_json(self, payload, path):
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2)
        return path

from ..base import EvolutionCommand
from ...orchestrator import load_config, run


class Command(EvolutionCommand):
    help = 'Runs an experiment from a config file into a new run directory'

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='experiment config JSON')
        parser.add_argument('--out', required=True, help='run directory to create')
        parser.add_argument('--seed', type=int, help='master seed, overrides the config')
        parser.add_argument('--strategy', help='transformation strategy, overrides the config')

    def execute_command(self, **options):
        config = load_config(options['config'], seed=options['seed'], strategy=options['strategy'])
        run_dir = run(config, options['out'])
        self.stdout.write(run_dir)

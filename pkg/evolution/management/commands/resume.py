from ..base import EvolutionCommand
from ...orchestrator import resume


class Command(EvolutionCommand):
    help = 'Continues a run from its newest committed checkpoint'

    def add_arguments(self, parser):
        parser.add_argument('run_dir', help='run directory created by the run command')

    def execute_command(self, **options):
        self.stdout.write(resume(options['run_dir']))

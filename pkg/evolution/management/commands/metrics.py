from ..base import EvolutionCommand
from ...metrics import run_reports


class Command(EvolutionCommand):
    help = 'Regenerates the CSV reports of a run from its checkpoints'

    def add_arguments(self, parser):
        parser.add_argument('run_dir')
        parser.add_argument('--out', required=True, help='directory for the CSV reports')
        parser.add_argument('--against', nargs='*', default=[],
                            help='other run directories for the reconstruction matrix')

    def execute_command(self, **options):
        for path in run_reports(options['run_dir'], options['out'], options['against']):
            self.stdout.write(path)

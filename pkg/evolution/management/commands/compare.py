from ..base import EvolutionCommand
from ...metrics import compare_sets
from ...storage import atomic_write_json, dumps, read_lattice_set


class Command(EvolutionCommand):
    help = 'Pairwise and aggregate tile-pattern KL divergence between two lattice sets'

    def add_arguments(self, parser):
        parser.add_argument('set_a', help='lattice file or directory of lattice files')
        parser.add_argument('set_b', help='lattice file or directory of lattice files')
        parser.add_argument('--out', help='JSON report file (default: stdout)')

    def execute_command(self, **options):
        report = compare_sets(read_lattice_set(options['set_a']), read_lattice_set(options['set_b']))
        report['a'] = options['set_a']
        report['b'] = options['set_b']
        if options['out']:
            atomic_write_json(options['out'], report)
        else:
            self.stdout.write(dumps(report))

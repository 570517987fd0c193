from ..base import EvolutionCommand
from ...storage import atomic_write_bytes, dumps, read_lattice
from ...voxel_core import lattice_to_csv_rows, lattice_to_json

import csv
import io

FORMATS = ('json', 'csv-voxels')


class Command(EvolutionCommand):
    help = 'Exports a lattice file as lattice JSON or as x,y,z,material rows'

    def add_arguments(self, parser):
        parser.add_argument('lattice', help='lattice JSON file')
        parser.add_argument('--format', choices=FORMATS, default='json')
        parser.add_argument('--out', help='output file (default: stdout)')

    def execute_command(self, **options):
        lattice = read_lattice(options['lattice'])

        if options['format'] == 'json':
            text = dumps(lattice_to_json(lattice))
        else:
            buffer = io.StringIO()
            writer = csv.writer(buffer)
            writer.writerow(['x', 'y', 'z', 'material'])
            writer.writerows(lattice_to_csv_rows(lattice))
            text = buffer.getvalue()

        if options['out']:
            atomic_write_bytes(options['out'], text.encode('utf-8'))
        else:
            self.stdout.write(text, ending='')

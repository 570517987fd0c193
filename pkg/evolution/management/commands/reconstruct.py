from ..base import EvolutionCommand
from ...autoencoder import reconstruct_many
from ...storage import lattice_paths, load_model, read_lattice, write_lattice

import numpy as np
import os


class Command(EvolutionCommand):
    help = 'Reports the reconstruction error of lattice files under a model'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='directory holding model.json and model.bin')
        parser.add_argument('lattices', nargs='+', help='lattice JSON files or directories of them')
        parser.add_argument('--out', help='directory for the reconstructed lattices')

    def execute_command(self, **options):
        paths = [p for arg in options['lattices'] for p in lattice_paths(arg)]
        lattices = [read_lattice(p) for p in paths]
        model = load_model(options['model'])

        errors = []
        for path, original, rebuilt in zip(paths, lattices, reconstruct_many(model, lattices)):
            error = 100.0 * float(np.mean(original != rebuilt))
            errors.append(error)
            self.stdout.write('{}\t{:.4f}'.format(path, error))
            if options['out']:
                write_lattice(os.path.join(options['out'], os.path.basename(path)), rebuilt)

        if errors:
            self.stdout.write('mean\t{:.4f}'.format(float(np.mean(errors))))

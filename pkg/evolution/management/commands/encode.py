from ..base import EvolutionCommand
from ...autoencoder import encode_many
from ...storage import atomic_write_json, dumps, lattice_paths, load_model, read_lattice


class Command(EvolutionCommand):
    help = 'Writes the latent vectors of lattice files under a model'

    def add_arguments(self, parser):
        parser.add_argument('--model', required=True, help='directory holding model.json and model.bin')
        parser.add_argument('lattices', nargs='+', help='lattice JSON files or directories of them')
        parser.add_argument('--out', help='JSON file for the vectors (default: stdout)')

    def execute_command(self, **options):
        paths = [p for arg in options['lattices'] for p in lattice_paths(arg)]
        lattices = [read_lattice(p) for p in paths]
        model = load_model(options['model'])

        latents = encode_many(model, lattices)
        record = {path: [float(v) for v in latent] for path, latent in zip(paths, latents)}
        if options['out']:
            atomic_write_json(options['out'], record)
        else:
            self.stdout.write(dumps(record))

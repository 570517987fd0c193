from ..base import EvolutionCommand
from ...errors import ConfigError, Error
from ...storage import write_lattice
from ...voxel_core import random_cuboid_hull, repair_pipeline

import logging
import numpy as np
import os

logger = logging.getLogger(__name__)

# rejection sampling gives up after this many draws per requested lattice
MAX_DRAWS_PER_LATTICE = 1000


class Command(EvolutionCommand):
    help = 'Generates a dataset of repaired random cuboid buildings'

    def add_arguments(self, parser):
        parser.add_argument('--count', type=int, default=200)
        parser.add_argument('--out', required=True, help='directory for the lattice files')
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--dims', type=int, nargs=3, default=[20, 20, 20])
        parser.add_argument('--min-size', type=int, default=4)
        parser.add_argument('--max-size', type=int, default=18)

    def execute_command(self, **options):
        count = options['count']
        dims = tuple(options['dims'])
        if count < 1:
            raise ConfigError('--count must be positive', {'count': ['must be positive']})
        if options['min_size'] < 1 or options['min_size'] > options['max_size'] or min(dims) < options['min_size']:
            raise ConfigError('cuboid sizes must satisfy 1 <= min-size <= max-size and min-size <= dims',
                              {'min_size': ['out of range']})

        rng = np.random.default_rng(options['seed'])
        written = 0
        draws = 0
        while written < count:
            if draws >= count * MAX_DRAWS_PER_LATTICE:
                raise Error('only {} feasible cuboids after {} draws'.format(written, draws))
            draws += 1
            hull = random_cuboid_hull(dims, rng, options['min_size'], options['max_size'])
            lattice, feasible = repair_pipeline(hull)
            if not feasible:
                continue
            write_lattice(os.path.join(options['out'], 'cube_{:04d}.json'.format(written)), lattice)
            written += 1

        logger.info('Wrote {} cuboid lattices in {} draws'.format(written, draws))
        self.stdout.write('{} lattices in {}'.format(written, options['out']))

"""
Run directory layout and checkpoint files.

    config.json
    bootstrap/population_PP.json, model.bin, model.json
    phase_NN/population_PP.json, archive_PP.json, exemplars_PP_*.json,
             exploration.json, model.bin, model.json
    metrics/phase_NN_generations.csv
    log.txt

Every file is written to a temporary name and renamed into place. The
exploration of a phase counts as committed once exploration.json exists and
its transformation once model.json exists; both are written last.
"""

from dataclasses import dataclass, field

import csv
import glob
import hashlib
import io
import json
import logging
import math
import os
import re
import tempfile

import numpy as np

from .cppn import genome_from_dict, genome_to_dict
from .errors import Error
from .neat import InnovationRegistry, NeatPopulation, Species, SpeciesSet

logger = logging.getLogger(__name__)

BOOTSTRAP = 'bootstrap'
METRICS = 'metrics'
CONFIG_FILE = 'config.json'
LOG_FILE = 'log.txt'
EXPLORATION_MARKER = 'exploration.json'
MODEL_WEIGHTS = 'model.bin'
MODEL_MANIFEST = 'model.json'

GENERATION_COLUMNS = [
    'phase', 'generation', 'population', 'feasible', 'mean_novelty', 'max_novelty', 'archive_size',
    'species', 'threshold', 'mean_bbox_volume', 'mean_symmetry', 'mean_instability',
    'mean_surface_area', 'mean_kl', 'ci95',
]

PHASE_PATTERN = re.compile(r'^phase_(\d+)$')


class RunError(Error):
    """Exception raised on missing, corrupt or conflicting run checkpoints."""
    pass


@dataclass
class PopulationSnapshot:
    """
    Final evaluated generation of one population
    """
    genomes: list
    scores: list = field(default_factory=list)
    feasible: list = field(default_factory=list)


def phase_name(phase):
    return 'phase_{:02d}'.format(phase)


def phase_dir(run_dir, phase):
    return os.path.join(run_dir, phase_name(phase))


def population_file(index):
    return 'population_{:02d}.json'.format(index)


def archive_file(index):
    return 'archive_{:02d}.json'.format(index)


def exemplar_file(index, rank):
    return 'exemplars_{:02d}_{}.json'.format(index, rank)


def generations_file(run_dir, phase):
    return os.path.join(run_dir, METRICS, '{}_generations.csv'.format(phase_name(phase)))


def atomic_write_bytes(path, data):
    directory = os.path.dirname(path) or '.'
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def dumps(record):
    return json.dumps(record, sort_keys=True, indent=1)


def atomic_write_json(path, record):
    atomic_write_bytes(path, dumps(record).encode('utf-8'))


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise RunError('missing checkpoint file {}'.format(path))
    except json.JSONDecodeError as e:
        raise RunError('corrupt checkpoint file {}: line {} column {}: {}'.format(path, e.lineno, e.colno, e.msg))


def rng_state(rng):
    return rng.bit_generator.state


def restore_rng(state):
    bit_generator = getattr(np.random, state['bit_generator'])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def species_set_to_dict(species_set):
    return {
        'threshold': species_set.threshold,
        'next_id': species_set.next_id,
        'species': [
            {
                'id': s.id,
                'representative': genome_to_dict(s.representative),
                'staleness': s.staleness,
                'best_fitness': None if math.isinf(s.best_fitness) else s.best_fitness,
            }
            for s in species_set.species
        ],
    }


def species_set_from_dict(record):
    species = []
    for s in record['species']:
        best = -math.inf if s['best_fitness'] is None else s['best_fitness']
        species.append(Species(s['id'], genome_from_dict(s['representative']), [], s['staleness'], best))
    return SpeciesSet(record['threshold'], species, record['next_id'])


def population_to_dict(population, rng, snapshot, index, phase):
    return {
        'population': index,
        'phase': phase,
        'generation': population.generation,
        'genomes': [genome_to_dict(g) for g in population.genomes],
        'scores': [float(s) for s in snapshot.scores],
        'feasible': [bool(f) for f in snapshot.feasible],
        'registry': population.registry.to_dict(),
        'species_set': species_set_to_dict(population.species_set),
        'rng_state': rng_state(rng),
    }


def population_from_dict(record, params):
    """
    (NeatPopulation, rng, PopulationSnapshot) from a population checkpoint
    """
    genomes = [genome_from_dict(g) for g in record['genomes']]
    population = NeatPopulation(
        genomes,
        params,
        species_set_from_dict(record['species_set']),
        InnovationRegistry.from_dict(record['registry']),
        record['generation'],
    )
    snapshot = PopulationSnapshot(genomes, list(record['scores']), list(record['feasible']))
    return population, restore_rng(record['rng_state']), snapshot


def save_population(directory, index, population, rng, snapshot, phase):
    atomic_write_json(os.path.join(directory, population_file(index)),
                      population_to_dict(population, rng, snapshot, index, phase))


def load_population(directory, index, params):
    return population_from_dict(read_json(os.path.join(directory, population_file(index))), params)


def save_archive(directory, index, archive):
    from .novelty import archive_to_json

    atomic_write_json(os.path.join(directory, archive_file(index)), archive_to_json(archive))


def load_archive(directory, index):
    from .novelty import archive_from_json

    return archive_from_json(read_json(os.path.join(directory, archive_file(index))))


def save_model(directory, model):
    """
    Weights first, then the manifest, which marks the model as committed
    """
    atomic_write_bytes(os.path.join(directory, MODEL_WEIGHTS), model.to_bytes())
    atomic_write_json(os.path.join(directory, MODEL_MANIFEST), model.manifest())


def load_model(directory):
    from .autoencoder import model_from_manifest

    manifest = read_json(os.path.join(directory, MODEL_MANIFEST))
    path = os.path.join(directory, MODEL_WEIGHTS)
    try:
        with open(path, 'rb') as f:
            weights = f.read()
    except FileNotFoundError:
        raise RunError('missing checkpoint file {}'.format(path))

    digest = hashlib.sha256(weights).hexdigest()
    if digest != manifest.get('weights_sha256'):
        raise RunError('{} does not match the sha256 in its manifest'.format(path))
    return model_from_manifest(manifest, weights)


def has_model(directory):
    return os.path.exists(os.path.join(directory, MODEL_MANIFEST))


def save_run_config(run_dir, config):
    from .orchestrator import config_to_dict

    atomic_write_json(os.path.join(run_dir, CONFIG_FILE), config_to_dict(config))


def load_run_config(run_dir):
    from .orchestrator import config_from_dict

    return config_from_dict(read_json(os.path.join(run_dir, CONFIG_FILE)))


def committed_phases(run_dir):
    """
    Phase indices whose exploration checkpoint is complete, ascending
    """
    phases = []
    for path in glob.glob(os.path.join(run_dir, 'phase_*')):
        match = PHASE_PATTERN.match(os.path.basename(path))
        if match and os.path.exists(os.path.join(path, EXPLORATION_MARKER)):
            phases.append(int(match.group(1)))
    return sorted(phases)


def commit_exploration(run_dir, phase, record):
    atomic_write_json(os.path.join(phase_dir(run_dir, phase), EXPLORATION_MARKER), record)
    logger.info('Committed exploration checkpoint {}'.format(phase_name(phase)))


def model_dir_before(run_dir, phase):
    """
    Directory of the model a phase explores with
    """
    if phase <= 1:
        return os.path.join(run_dir, BOOTSTRAP)
    return phase_dir(run_dir, phase - 1)


def load_exploration_model(run_dir, phase):
    return load_model(model_dir_before(run_dir, phase))


def load_latest_model(run_dir):
    for phase in reversed(committed_phases(run_dir)):
        if has_model(phase_dir(run_dir, phase)):
            return load_model(phase_dir(run_dir, phase))
    return load_model(os.path.join(run_dir, BOOTSTRAP))


def load_snapshots(directory, config):
    snapshots = []
    for index in range(config.populations):
        _, _, snapshot = load_population(directory, index, config.neat)
        snapshots.append(snapshot)
    return snapshots


def load_phase_snapshots(run_dir, phase, config):
    return load_snapshots(phase_dir(run_dir, phase), config)


def load_bootstrap_snapshots(run_dir, config):
    return load_snapshots(os.path.join(run_dir, BOOTSTRAP), config)


def write_generation_rows(run_dir, phase, rows):
    """
    rows: dicts keyed by GENERATION_COLUMNS
    """
    path = generations_file(run_dir, phase)
    lines = []
    for row in rows:
        lines.append([row[c] for c in GENERATION_COLUMNS])

    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(GENERATION_COLUMNS)
    writer.writerows(lines)
    atomic_write_bytes(path, buffer.getvalue().encode('utf-8'))


def read_generation_rows(run_dir, phase):
    path = generations_file(run_dir, phase)
    try:
        with open(path, newline='') as f:
            return list(csv.DictReader(f))
    except FileNotFoundError:
        raise RunError('missing metrics file {}'.format(path))


def read_lattice(path):
    """
    Material lattice from a lattice JSON file; errors name the file and field
    """
    from .voxel_core import LatticeError, lattice_from_json

    try:
        with open(path) as f:
            record = json.load(f)
    except FileNotFoundError:
        raise LatticeError('{}: no such lattice file'.format(path))
    except json.JSONDecodeError as e:
        raise LatticeError('{}: not valid JSON: line {} column {}: {}'.format(path, e.lineno, e.colno, e.msg))
    try:
        return lattice_from_json(record)
    except LatticeError as e:
        raise LatticeError('{}: {}'.format(path, e.message), field=e.field)


def lattice_paths(path):
    """
    A lattice file, or the sorted *.json files of a directory
    """
    if os.path.isdir(path):
        return sorted(glob.glob(os.path.join(path, '*.json')))
    return [path]


def read_lattice_set(path):
    return [read_lattice(p) for p in lattice_paths(path)]


def write_lattice(path, lattice):
    from .voxel_core import lattice_to_json

    atomic_write_json(path, lattice_to_json(lattice))

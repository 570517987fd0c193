"""
The exploration / transformation loop.

An exploration phase evolves every population with CPPN-NEAT for a fixed
number of generations, scoring feasible buildings by novelty in the current
latent space. A transformation phase then changes that latent space according
to the run's strategy and re-encodes the novelty archives.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from django.conf import settings

import hashlib
import json
import logging
import os

import numpy as np

from . import storage
from .autoencoder import AutoencoderModel, AutoencoderParams, encode_many, randomize, train
from .cppn import generate_hull
from .errors import ConfigError
from .metrics import MetricsError, MetricsParams, mean_ci95, population_diversity
from .neat import NeatParams, NeatPopulation, next_generation
from .novelty import NoveltyArchive, reencode_archive, score_population, update_archive
from .storage import PopulationSnapshot, RunError
from .voxel_core import lattice_key, lattice_to_json, repair_pipeline, solid_mask, structural_stats

logger = logging.getLogger(__name__)

NO_RETRAINING = ('static', 'random')


@dataclass
class ExperimentConfig:
    strategy: str
    iterations: int = 10
    populations: int = 10
    population_size: int = 200
    generations_per_phase: int = 100
    k: int = 15
    alpha: int = 3
    latent_dim: int = 256
    epochs: int = 100
    batch: int = 64
    seed: int = 0
    dims: tuple = (20, 20, 20)
    latest_set_size: int = 100
    diversity_interval: int = 1
    neat: NeatParams = field(default_factory=NeatParams)
    autoencoder: AutoencoderParams = field(default_factory=AutoencoderParams)
    metrics: MetricsParams = field(default_factory=MetricsParams)


def config_from_dict(record):
    """
    Validates a config record and builds the ExperimentConfig; the top-level
    counts override the nested parameter blocks
    """
    from .serializers import ExperimentConfigSerializer, validated

    data = validated(ExperimentConfigSerializer, record, 'config')
    neat = NeatParams(**data.pop('neat', {}))
    autoencoder = AutoencoderParams(**data.pop('autoencoder', {}))
    metrics = MetricsParams(**data.pop('metrics', {}))
    data.pop('schema_version')

    neat.population_size = data['population_size']
    autoencoder.latent_dim = data['latent_dim']
    autoencoder.epochs = data['epochs']
    autoencoder.batch_size = data['batch']
    data['dims'] = tuple(data['dims'])
    return ExperimentConfig(neat=neat, autoencoder=autoencoder, metrics=metrics, **data)


def config_to_dict(config):
    from .serializers import SCHEMA_VERSION

    record = asdict(config)
    record['dims'] = list(config.dims)
    record['schema_version'] = SCHEMA_VERSION
    return record


def load_config(path, **overrides):
    """
    Reads a config file; non-None overrides replace top-level keys before validation
    """
    try:
        with open(path) as f:
            record = json.load(f)
    except FileNotFoundError:
        raise ConfigError('config file {} does not exist'.format(path), {'config': ['not found']})
    except json.JSONDecodeError as e:
        raise ConfigError('config is not valid JSON: line {} column {}: {}'.format(e.lineno, e.colno, e.msg),
                          {'config': ['line {} column {}: {}'.format(e.lineno, e.colno, e.msg)]})
    if not isinstance(record, dict):
        raise ConfigError('config must be a JSON object', {'config': ['must be an object']})
    for key, value in overrides.items():
        if value is not None:
            record[key] = value
    return config_from_dict(record)


def derive_seed(master_seed, label, index=0):
    """
    Independent stream seed per (label, index), stable across population counts
    """
    digest = int.from_bytes(hashlib.sha256(label.encode('utf-8')).digest()[:4], 'little')
    sequence = np.random.SeedSequence(master_seed, spawn_key=(digest, index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def derive_rng(master_seed, label, index=0):
    return np.random.default_rng(derive_seed(master_seed, label, index))


def express(genome, dims):
    """
    (material lattice, feasible) of a genome
    """
    return repair_pipeline(generate_hull(genome, dims))


def population_lattices(snapshots, dims, feasible_only=True):
    """
    Lattices of every snapshot regenerated from the genomes: the feasible ones,
    or with feasible_only=False every lattice with a solid voxel
    """
    result = []
    for snapshot in snapshots:
        lattices = []
        for genome, ok in zip(snapshot.genomes, snapshot.feasible):
            if feasible_only and not ok:
                continue
            lattice = express(genome, dims)[0]
            if ok or solid_mask(lattice).any():
                lattices.append(lattice)
        result.append(lattices)
    return result


class PopulationState:
    """
    One population's evolving genomes, its rng stream and novelty archive
    """

    def __init__(self, index, population, rng, archive=None, snapshot=None):
        self.index = index
        self.population = population
        self.rng = rng
        self.archive = archive if archive is not None else NoveltyArchive()
        self.snapshot = snapshot


class RunState:

    def __init__(self, config, model, populations, phase=0, history=None, run_dir=None):
        self.config = config
        self.model = model
        self.populations = populations
        self.phase = phase                  # last phase whose exploration finished
        self.history = history or []        # per phase: [PopulationSnapshot per population]
        self.run_dir = run_dir
        self.pending_transformation = False

    @property
    def autoencoder_seed(self):
        return derive_seed(self.config.seed, 'autoencoder')


def _thread_count(config):
    return max(1, min(settings.VOXNOX_THREADS, config.populations))


def _map_populations(config, fn, items):
    workers = _thread_count(config)
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def bootstrap(config, run_dir=None):
    """
    Seeds every population from the master seed and trains the initial model on
    every non-empty repaired seed lattice, feasible or not. The result does not
    depend on the strategy.
    """
    logger.info('Bootstrapping {} populations of {}'.format(config.populations, config.population_size))
    populations = []
    seed_lattices = []
    for index in range(config.populations):
        rng = derive_rng(config.seed, 'population', index)
        population = NeatPopulation.seeded(config.neat, rng)
        expressed = [express(g, config.dims) for g in population.genomes]
        flags = [ok for _, ok in expressed]
        seed_lattices.extend(lattice for lattice, _ in expressed if solid_mask(lattice).any())
        snapshot = PopulationSnapshot(population.genomes, [0.0] * len(flags), flags)
        populations.append(PopulationState(index, population, rng, snapshot=snapshot))
        logger.info('Seed population {}: {} of {} feasible'.format(index, sum(flags), len(flags)))

    if len(seed_lattices) < 2:
        raise RunError('bootstrap produced {} non-empty seed lattices, at least 2 are needed; '
                       'try another seed or larger populations'.format(len(seed_lattices)))

    model = AutoencoderModel(config.autoencoder, seed=derive_seed(config.seed, 'autoencoder'), dims=config.dims)
    train(model, seed_lattices, rng=derive_rng(config.seed, 'bootstrap'))
    state = RunState(config, model, populations, run_dir=run_dir)

    if run_dir:
        directory = os.path.join(run_dir, storage.BOOTSTRAP)
        for ps in populations:
            storage.save_population(directory, ps.index, ps.population, ps.rng, ps.snapshot, 0)
        storage.save_model(directory, model)
        logger.info('Committed bootstrap checkpoint')
    return state


def _mean(values):
    return float(np.mean(values)) if len(values) else 0.0


def evaluate_generation(ps, model, config, phase=0, generation=0):
    """
    Expresses, repairs and scores one generation, then updates the archive.
    Returns (PopulationSnapshot, feasible lattices, feasible scores).
    """
    genomes = ps.population.genomes
    expressed = [express(g, config.dims) for g in genomes]
    flags = [ok for _, ok in expressed]
    lattices = [lattice for lattice, ok in expressed if ok]

    scores = np.zeros(len(genomes))
    feasible_scores = np.zeros(0)
    if lattices:
        latents = encode_many(model, lattices)
        feasible_scores = score_population(latents, ps.archive, config.k)
        scores[np.flatnonzero(flags)] = feasible_scores
        candidates = list(zip(lattices, latents, feasible_scores))
        update_archive(ps.archive, candidates, config.alpha, phase, generation)

    return PopulationSnapshot(genomes, [float(s) for s in scores], flags), lattices, feasible_scores


def _generation_row(ps, phase, generation, lattices, scores, config, measure_diversity):
    stats = [structural_stats(l) for l in lattices]
    row = {
        'phase': phase,
        'generation': generation,
        'population': ps.index,
        'feasible': len(lattices),
        'mean_novelty': '{:.6f}'.format(_mean(scores)),
        'max_novelty': '{:.6f}'.format(float(np.max(scores)) if len(scores) else 0.0),
        'archive_size': len(ps.archive),
        'species': len(ps.population.species_set.species),
        'threshold': '{:.6f}'.format(ps.population.species_set.threshold),
        'mean_bbox_volume': '{:.6f}'.format(_mean([float(np.prod(s['bounding_box'])) for s in stats])),
        'mean_symmetry': '{:.6f}'.format(_mean([s['symmetry'] for s in stats])),
        'mean_instability': '{:.6f}'.format(_mean([s['instability'] for s in stats])),
        'mean_surface_area': '{:.6f}'.format(_mean([float(s['surface_area']) for s in stats])),
        'mean_kl': '',
        'ci95': '',
    }
    if measure_diversity and len(lattices) >= 2:
        try:
            mean, ci = mean_ci95(population_diversity(lattices, config.metrics))
            row['mean_kl'] = '{:.6f}'.format(mean)
            row['ci95'] = '{:.6f}'.format(ci)
        except MetricsError as e:
            logger.warning('Diversity skipped for population {}: {}'.format(ps.index, e.message))
    return row


def explore_population(ps, model, config, phase):
    """
    Runs one population through a phase; the last generation is evaluated
    but not bred, and becomes the phase snapshot
    """
    rows = []
    final_lattices = []
    generations = config.generations_per_phase
    for generation in range(generations):
        snapshot, lattices, scores = evaluate_generation(ps, model, config, phase, generation)
        measure = generation % config.diversity_interval == 0 or generation == generations - 1
        rows.append(_generation_row(ps, phase, generation, lattices, scores, config, measure))
        logger.debug('phase={} population={} generation={} feasible={} archive={}'.format(
            phase, ps.index, generation, len(lattices), len(ps.archive)))

        if generation < generations - 1:
            ps.population = next_generation(ps.population, snapshot.scores, snapshot.feasible,
                                             config.neat, ps.population.registry, ps.rng)
        else:
            ps.snapshot = snapshot
            final_lattices = lattices
    return rows, final_lattices


def _exemplars(ps, lattices):
    """
    Lowest, median and highest novelty feasible finals
    """
    scores = [s for s, ok in zip(ps.snapshot.scores, ps.snapshot.feasible) if ok]
    if not lattices:
        return {}
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    return {
        'min': lattices[order[0]],
        'median': lattices[order[len(order) // 2]],
        'max': lattices[order[-1]],
    }


def exploration_phase(state, config=None):
    config = config or state.config
    phase = state.phase + 1
    logger.info('Exploration phase {} ({} generations, strategy {})'.format(
        phase, config.generations_per_phase, config.strategy))

    results = _map_populations(config, lambda ps: explore_population(ps, state.model, config, phase),
                               state.populations)
    state.phase = phase
    state.history.append([ps.snapshot for ps in state.populations])

    if state.run_dir:
        directory = storage.phase_dir(state.run_dir, phase)
        rows = []
        for ps, (population_rows, lattices) in zip(state.populations, results):
            rows.extend(population_rows)
            storage.save_population(directory, ps.index, ps.population, ps.rng, ps.snapshot, phase)
            storage.save_archive(directory, ps.index, ps.archive)
            for rank, lattice in _exemplars(ps, lattices).items():
                storage.atomic_write_json(os.path.join(directory, storage.exemplar_file(ps.index, rank)),
                                          lattice_to_json(lattice))
        storage.write_generation_rows(state.run_dir, phase, rows)
        storage.commit_exploration(state.run_dir, phase, {
            'phase': phase,
            'populations': len(state.populations),
            'archive_sizes': [len(ps.archive) for ps in state.populations],
        })
    return state


def latest_set(snapshot, dims, size, index=None):
    """
    The `size` most novel feasible finals of one population, ranked by their
    last novelty score
    """
    ranked = [i for i in sorted(range(len(snapshot.genomes)), key=lambda i: -snapshot.scores[i])
              if snapshot.feasible[i]]
    if len(ranked) < size:
        logger.warning('Population {} has {} feasible finals, fewer than {}; taking all of them'.format(
            index, len(ranked), size))
    return [express(snapshot.genomes[i], dims)[0] for i in ranked[:size]]


def assemble_training_set(state, strategy=None):
    strategy = strategy or state.config.strategy
    config = state.config
    if not state.history:
        raise RunError('no exploration phase has completed')

    if strategy in NO_RETRAINING:
        return []

    if strategy == 'latest_set':
        phases = state.history[-1:]
    elif strategy == 'full_history':
        phases = state.history
    elif strategy == 'novelty_archive':
        seen = set()
        lattices = []
        for ps in state.populations:
            for lattice in ps.archive.lattices:
                key = lattice_key(lattice)
                if key not in seen:
                    seen.add(key)
                    lattices.append(lattice)
        return lattices
    else:
        raise ConfigError('unknown strategy {}'.format(strategy), {'strategy': ['unknown']})

    lattices = []
    for snapshots in phases:
        for index, snapshot in enumerate(snapshots):
            lattices.extend(latest_set(snapshot, config.dims, config.latest_set_size, index))
    return lattices


def transformation_phase(state, config=None):
    config = config or state.config
    phase = state.phase
    strategy = config.strategy
    logger.info('Transformation phase {} (strategy {})'.format(phase, strategy))

    if strategy == 'random':
        model = AutoencoderModel(config.autoencoder, seed=state.model.seed, dims=config.dims)
        state.model = randomize(model, derive_seed(config.seed, 'random', phase))
    elif strategy != 'static':
        lattices = assemble_training_set(state, strategy)
        if not lattices:
            raise RunError('strategy {} assembled an empty training set in phase {}'.format(strategy, phase))
        model = AutoencoderModel(config.autoencoder, seed=state.autoencoder_seed, dims=config.dims)
        train(model, lattices, rng=derive_rng(config.seed, 'transform', phase))
        state.model = model

    for ps in state.populations:
        reencode_archive(ps.archive, state.model)

    if state.run_dir:
        storage.save_model(storage.phase_dir(state.run_dir, phase), state.model)
        logger.info('Committed transformation checkpoint {}'.format(storage.phase_name(phase)))
    return state


def _attach_log(run_dir):
    handler = logging.FileHandler(os.path.join(run_dir, storage.LOG_FILE))
    handler.setFormatter(logging.Formatter(settings.RUN_LOG_FORMAT))
    handler.setLevel(logging.INFO)
    logging.getLogger('evolution').addHandler(handler)
    return handler


def _detach_log(handler):
    logging.getLogger('evolution').removeHandler(handler)
    handler.close()


def _continue(state):
    config = state.config
    while state.phase < config.iterations:
        exploration_phase(state)
        transformation_phase(state)
    return state


def run(config, run_dir):
    """
    Bootstrap, then alternate exploration and transformation for the
    configured iterations, checkpointing after every phase
    """
    if os.path.exists(os.path.join(run_dir, storage.CONFIG_FILE)):
        raise RunError('{} already holds a run; resume it instead'.format(run_dir))
    os.makedirs(run_dir, exist_ok=True)
    storage.save_run_config(run_dir, config)

    handler = _attach_log(run_dir)
    try:
        state = bootstrap(config, run_dir)
        _continue(state)
        logger.info('Run complete: {} phases in {}'.format(state.phase, run_dir))
    finally:
        _detach_log(handler)
    return run_dir


def load_state(run_dir):
    """
    Rebuilds the RunState at the newest committed checkpoint. A phase whose
    exploration committed but whose transformation did not comes back with
    state.phase set to it and `pending_transformation` True.
    """
    config = storage.load_run_config(run_dir)
    bootstrap_dir = os.path.join(run_dir, storage.BOOTSTRAP)
    if not storage.has_model(bootstrap_dir):
        return None

    phases = storage.committed_phases(run_dir)
    expected = list(range(1, len(phases) + 1))
    if phases != expected:
        raise RunError('{} has non-contiguous phases {}'.format(run_dir, phases))

    history = [storage.load_phase_snapshots(run_dir, phase, config) for phase in phases]
    last = phases[-1] if phases else 0
    directory = storage.phase_dir(run_dir, last) if last else bootstrap_dir

    populations = []
    for index in range(config.populations):
        population, rng, snapshot = storage.load_population(directory, index, config.neat)
        archive = storage.load_archive(directory, index) if last else NoveltyArchive()
        populations.append(PopulationState(index, population, rng, archive, snapshot))

    pending = bool(last) and not storage.has_model(directory)
    model_dir = storage.model_dir_before(run_dir, last) if pending else directory
    state = RunState(config, storage.load_model(model_dir), populations, last, history, run_dir)
    state.pending_transformation = pending

    if not pending:
        for ps in state.populations:
            reencode_archive(ps.archive, state.model)
    return state


def resume(run_dir):
    """
    Continues a run from its newest committed checkpoint
    """
    if not os.path.exists(os.path.join(run_dir, storage.CONFIG_FILE)):
        raise RunError('{} is not a run directory'.format(run_dir))

    handler = _attach_log(run_dir)
    try:
        state = load_state(run_dir)
        if state is None:
            logger.info('No committed bootstrap in {}; starting from scratch'.format(run_dir))
            state = bootstrap(storage.load_run_config(run_dir), run_dir)
        else:
            logger.info('Resuming {} after phase {}'.format(run_dir, state.phase))
            if state.pending_transformation:
                transformation_phase(state)
        _continue(state)
        logger.info('Run complete: {} phases in {}'.format(state.phase, run_dir))
    finally:
        _detach_log(handler)
    return run_dir

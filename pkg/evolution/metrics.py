"""
Evaluation measures over material lattices.

Voxel-level diversity is the KL divergence between the distributions of
2x2x2 material patterns of two lattices. A pattern is coded as one base-5
integer; the distribution of a pair is smoothed over the patterns observed in
either lattice:

    P(s) = (count(s) + eps) / (total + eps * |support|)

KL is directional and always taken as (individual || other).
"""

from dataclasses import dataclass
from scipy import sparse
from scipy.spatial.distance import cdist
from scipy.stats import pearsonr

import csv
import logging
import math
import os

import numpy as np

from .errors import Error
from .voxel_core import NUM_MATERIALS

logger = logging.getLogger(__name__)

DIVERSITY_COLUMNS = ['phase', 'generation', 'population', 'mean_kl', 'ci95']
DIVERGENCE_COLUMNS = ['phase', 'population', 'mean_kl', 'ci95']
CORRELATION_COLUMNS = ['phase', 'population', 'pearson_r', 'pairs', 'defined']
RECONSTRUCTION_COLUMNS = ['phase', 'population', 'mean_error', 'std_error']
MATRIX_COLUMNS = ['model', 'population', 'mean', 'std']

# 5 ** 27 still fits in an int64
MAX_WINDOW = 3


class MetricsError(Error):
    """Exception raised when a measure is undefined for its input."""
    pass


@dataclass
class MetricsParams:
    window: int = 2
    epsilon: float = 1e-6


@dataclass
class PatternDistribution:
    """
    Raw pattern counts of one lattice; smoothing is applied per compared pair
    """
    patterns: np.ndarray     # sorted unique pattern codes
    counts: np.ndarray       # occurrences, aligned with patterns
    epsilon: float = 1e-6

    @property
    def total(self):
        return int(self.counts.sum())

    def raw_probabilities(self):
        return {int(p): c / self.total for p, c in zip(self.patterns, self.counts)}

    def smoothed(self, support):
        """
        Smoothed probabilities over a sorted support containing every observed pattern
        """
        counts = np.zeros(len(support), dtype=np.float64)
        counts[np.searchsorted(support, self.patterns)] = self.counts
        return (counts + self.epsilon) / (self.total + self.epsilon * len(support))


def pattern_codes(lattice, window=2):
    """
    Base-5 code of every window x window x window block, stride 1
    """
    lattice = np.asarray(lattice, dtype=np.int64)
    if not 1 <= window <= MAX_WINDOW:
        raise MetricsError('window must be between 1 and {}'.format(MAX_WINDOW))
    if any(d < window for d in lattice.shape):
        raise MetricsError('window {} exceeds lattice dims {}'.format(window, lattice.shape))

    nx, ny, nz = (d - window + 1 for d in lattice.shape)
    codes = np.zeros((nx, ny, nz), dtype=np.int64)
    place = 1
    for dx in range(window):
        for dy in range(window):
            for dz in range(window):
                codes += place * lattice[dx:dx + nx, dy:dy + ny, dz:dz + nz]
                place *= NUM_MATERIALS
    return codes.ravel()


def pattern_distribution(lattice, window=2, epsilon=1e-6):
    patterns, counts = np.unique(pattern_codes(lattice, window), return_counts=True)
    return PatternDistribution(patterns, counts.astype(np.int64), epsilon)


def kl_divergence(p, q):
    """
    KL(p || q) over the union of the patterns observed in p and q
    """
    support = np.union1d(p.patterns, q.patterns)
    probs_p = p.smoothed(support)
    probs_q = q.smoothed(support)
    return float(np.sum(probs_p * np.log(probs_p / probs_q)))


def _count_matrix(distributions, columns):
    rows = []
    cols = []
    data = []
    for i, dist in enumerate(distributions):
        rows.append(np.full(len(dist.patterns), i))
        cols.append(np.searchsorted(columns, dist.patterns))
        data.append(dist.counts.astype(np.float64))
    shape = (len(distributions), len(columns))
    return sparse.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape)


def kl_matrix(rows, cols):
    """
    Directional KL of every row distribution against every column distribution.

    With C the count vectors, T the totals, s the pair support size and
    M = ln(C + eps) - ln(eps) (zero off the observed patterns):

        KL(i || j) = A(i, j) / (T_i + eps s) + ln((T_j + eps s) / (T_i + eps s))
        A(i, j)    = C_i.M_i - C_i.M_j + eps (sum M_i - sum M_j)

    Both sums only touch observed patterns, so sparse products suffice.
    """
    if not rows or not cols:
        return np.zeros((len(rows), len(cols)))
    epsilon = rows[0].epsilon
    columns = np.unique(np.concatenate([d.patterns for d in list(rows) + list(cols)]))

    counts_r = _count_matrix(rows, columns)
    counts_c = _count_matrix(cols, columns)
    logs_r = counts_r.copy()
    logs_r.data = np.log(logs_r.data + epsilon) - math.log(epsilon)
    logs_c = counts_c.copy()
    logs_c.data = np.log(logs_c.data + epsilon) - math.log(epsilon)

    self_terms = np.asarray(counts_r.multiply(logs_r).sum(axis=1)).ravel()
    cross_terms = (counts_r @ logs_c.T).toarray()
    log_sums_r = np.asarray(logs_r.sum(axis=1)).ravel()
    log_sums_c = np.asarray(logs_c.sum(axis=1)).ravel()
    a = self_terms[:, None] - cross_terms + epsilon * (log_sums_r[:, None] - log_sums_c[None, :])

    observed_r = (counts_r > 0).astype(np.float64)
    observed_c = (counts_c > 0).astype(np.float64)
    shared = (observed_r @ observed_c.T).toarray()
    observed_counts_r = np.asarray(observed_r.sum(axis=1)).ravel()
    observed_counts_c = np.asarray(observed_c.sum(axis=1)).ravel()
    support = observed_counts_r[:, None] + observed_counts_c[None, :] - shared

    totals_r = np.asarray(counts_r.sum(axis=1)).ravel()[:, None]
    totals_c = np.asarray(counts_c.sum(axis=1)).ravel()[None, :]
    norm_r = totals_r + epsilon * support
    norm_c = totals_c + epsilon * support
    # rounding can leave identical pairs a hair below zero
    return np.maximum(a / norm_r + np.log(norm_c / norm_r), 0.0)


def distributions(lattices, params=None):
    params = params or MetricsParams()
    return [pattern_distribution(l, params.window, params.epsilon) for l in lattices]


def population_diversity(population, params=None):
    """
    Mean KL of each individual to the rest of the population
    """
    if len(population) < 2:
        raise MetricsError('population diversity needs at least 2 lattices, got {}'.format(len(population)))
    dists = distributions(population, params)
    matrix = kl_matrix(dists, dists)
    np.fill_diagonal(matrix, 0.0)
    return list(matrix.sum(axis=1) / (len(population) - 1))


def divergence_from_seed(population, seed_population, params=None):
    """
    Mean KL of each individual to every individual of the seed population
    """
    if not len(seed_population):
        raise MetricsError('seed population is empty')
    if not len(population):
        return []
    matrix = kl_matrix(distributions(population, params), distributions(seed_population, params))
    return list(matrix.mean(axis=1))


@dataclass
class CorrelationResult:
    r: float
    pairs: int
    defined: bool


def pearson_or_flag(x, y):
    """
    Pearson r of two series, flagged undefined when either has zero variance
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return CorrelationResult(float('nan'), len(x), False)
    r, _ = pearsonr(x, y)
    return CorrelationResult(float(np.clip(r, -1.0, 1.0)), len(x), True)


def latent_phenotype_correlation(population, model, params=None, latents=None):
    """
    Pearson r between latent Euclidean distance and KL divergence over every
    ordered pair of distinct individuals
    """
    if len(population) < 3:
        raise MetricsError('correlation needs at least 3 lattices, got {}'.format(len(population)))
    if latents is None:
        from .autoencoder import encode_many
        latents = encode_many(model, population)

    latent_distances = cdist(latents, latents)
    dists = distributions(population, params)
    divergences = kl_matrix(dists, dists)
    off_diagonal = ~np.eye(len(population), dtype=bool)
    return pearson_or_flag(latent_distances[off_diagonal], divergences[off_diagonal])


def pooled_distribution(lattices, params=None):
    """
    Pattern counts of a whole set of lattices taken together
    """
    params = params or MetricsParams()
    codes = np.concatenate([pattern_codes(l, params.window) for l in lattices])
    patterns, counts = np.unique(codes, return_counts=True)
    return PatternDistribution(patterns, counts.astype(np.int64), params.epsilon)


def compare_sets(set_a, set_b, params=None):
    """
    Pairwise KL of every lattice of A against every lattice of B, plus the KL
    between the pooled pattern distributions of the two sets
    """
    if not len(set_a) or not len(set_b):
        raise MetricsError('both lattice sets must be non-empty')
    matrix = kl_matrix(distributions(set_a, params), distributions(set_b, params))
    mean, ci = mean_ci95(matrix.ravel())
    return {
        'a_count': len(set_a),
        'b_count': len(set_b),
        'pairs': int(matrix.size),
        'pairwise_mean_kl': mean,
        'pairwise_ci95': ci,
        'aggregate_kl': kl_divergence(pooled_distribution(set_a, params), pooled_distribution(set_b, params)),
    }


def mean_ci95(values):
    """
    (mean, 1.96 * std / sqrt(n)); (0, 0) for no values
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0, 0.0
    return float(values.mean()), float(1.96 * values.std() / math.sqrt(values.size))


def reconstruction_matrix(models, populations):
    """
    models: {name: AutoencoderModel}
    populations: {name: [list of lattices per population]}
    Returns {model name: {population name: (mean, std), 'overall': (mean, std)}}
    where each cell summarises the mean reconstruction error of each population
    and 'overall' pools the populations of every name.
    """
    from .autoencoder import reconstruction_error

    matrix = {}
    for model_name, model in models.items():
        row = {}
        pooled = []
        for population_name, groups in populations.items():
            errors = [reconstruction_error(model, lattices) for lattices in groups if len(lattices)]
            pooled.extend(errors)
            row[population_name] = (float(np.mean(errors)), float(np.std(errors))) if errors else (0.0, 0.0)
        row['overall'] = (float(np.mean(pooled)), float(np.std(pooled))) if pooled else (0.0, 0.0)
        matrix[model_name] = row
        logger.info('Reconstruction matrix row {} overall={:.2f}'.format(model_name, row['overall'][0]))
    return matrix


def write_csv(path, columns, rows):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        writer.writerows(rows)


def _fmt(value):
    return '{:.6f}'.format(value) if isinstance(value, float) else value


def run_reports(run_dir, out_dir, against=None, params=None):
    """
    Regenerates every CSV report of a run from its checkpoints.
    `against` lists other run directories whose final model and populations
    join the reconstruction matrix.
    Returns the list of files written.
    """
    from . import storage
    from .autoencoder import reconstruction_errors
    from .orchestrator import population_lattices

    config = storage.load_run_config(run_dir)
    params = params or config.metrics
    phases = storage.committed_phases(run_dir)
    if not phases:
        raise MetricsError('{} has no committed exploration phase'.format(run_dir))
    os.makedirs(out_dir, exist_ok=True)

    seed_lattices = population_lattices(storage.load_bootstrap_snapshots(run_dir, config), config.dims,
                                        feasible_only=False)

    diversity_rows = []
    for p, lattices in enumerate(seed_lattices):
        if len(lattices) >= 2:
            mean, ci = mean_ci95(population_diversity(lattices, params))
            diversity_rows.append([0, 0, p, _fmt(mean), _fmt(ci)])
    for phase in phases:
        for record in storage.read_generation_rows(run_dir, phase):
            if record['mean_kl'] != '':
                diversity_rows.append([record[c] for c in DIVERSITY_COLUMNS])

    divergence_rows = []
    correlation_rows = []
    reconstruction_rows = []
    for phase in phases:
        model = storage.load_exploration_model(run_dir, phase)
        snapshots = storage.load_phase_snapshots(run_dir, phase, config)
        for p, lattices in enumerate(population_lattices(snapshots, config.dims)):
            if not lattices:
                logger.warning('Phase {} population {} has no feasible finals'.format(phase, p))
                continue
            if seed_lattices[p]:
                mean, ci = mean_ci95(divergence_from_seed(lattices, seed_lattices[p], params))
                divergence_rows.append([phase, p, _fmt(mean), _fmt(ci)])

            if len(lattices) >= 3:
                result = latent_phenotype_correlation(lattices, model, params)
                correlation_rows.append([phase, p, _fmt(result.r), result.pairs, result.defined])

            errors = reconstruction_errors(model, lattices)
            reconstruction_rows.append([phase, p, _fmt(float(np.mean(errors))), _fmt(float(np.std(errors)))])

    runs = [run_dir] + list(against or [])
    models = {}
    populations = {}
    for other in runs:
        name = os.path.basename(os.path.normpath(other))
        other_config = storage.load_run_config(other)
        other_phases = storage.committed_phases(other)
        if not other_phases:
            raise MetricsError('{} has no committed exploration phase'.format(other))
        last = other_phases[-1]
        models[name] = storage.load_latest_model(other)
        populations[name] = population_lattices(storage.load_phase_snapshots(other, last, other_config),
                                                other_config.dims)
    matrix_rows = []
    for model_name, row in reconstruction_matrix(models, populations).items():
        for population_name, (mean, std) in row.items():
            matrix_rows.append([model_name, population_name, _fmt(mean), _fmt(std)])

    written = []
    for name, columns, rows in (
            ('diversity.csv', DIVERSITY_COLUMNS, diversity_rows),
            ('divergence_from_seed.csv', DIVERGENCE_COLUMNS, divergence_rows),
            ('correlation.csv', CORRELATION_COLUMNS, correlation_rows),
            ('reconstruction.csv', RECONSTRUCTION_COLUMNS, reconstruction_rows),
            ('reconstruction_matrix.csv', MATRIX_COLUMNS, matrix_rows)):
        path = os.path.join(out_dir, name)
        write_csv(path, columns, rows)
        written.append(path)
        logger.info('Wrote {} rows to {}'.format(len(rows), path))
    return written

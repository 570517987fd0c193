"""
Novelty in latent space: mean Euclidean distance to the k nearest neighbours
among the feasible population and the population's novelty archive.
"""

from dataclasses import dataclass
from scipy.spatial.distance import cdist

import logging
import numpy as np

from .errors import Error
from .voxel_core import lattice_from_json, lattice_key, lattice_to_json

logger = logging.getLogger(__name__)

DEFAULT_K = 15
DEFAULT_ALPHA = 3


class NoveltyError(Error):
    """Exception raised when latent vectors do not line up."""
    pass


@dataclass
class ArchiveEntry:
    lattice: np.ndarray
    latent: np.ndarray
    phase: int
    generation: int


class NoveltyArchive:
    """
    Unique (lattice, latent) pairs judged novel during evolution
    """

    def __init__(self, entries=None):
        self.entries = []
        self._keys = set()
        for entry in entries or ():
            self.add(entry)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, lattice):
        return lattice_key(lattice) in self._keys

    def add(self, entry):
        key = lattice_key(entry.lattice)
        if key in self._keys:
            return False
        self._keys.add(key)
        self.entries.append(entry)
        return True

    @property
    def lattices(self):
        return [e.lattice for e in self.entries]

    def latents(self, latent_dim=None):
        if not self.entries:
            return np.zeros((0, latent_dim or 0))
        return np.stack([e.latent for e in self.entries])


def _as_pool(vectors, dim):
    pool = np.asarray(vectors, dtype=np.float64)
    if pool.size == 0:
        return np.zeros((0, dim))
    if pool.ndim != 2 or pool.shape[1] != dim:
        raise NoveltyError('pool vectors have shape {}, expected (n, {})'.format(pool.shape, dim))
    return pool


def mean_nearest(distances, k):
    """
    Mean of the k smallest distances, or of all of them if there are fewer
    """
    if distances.size == 0:
        return 0.0
    nearest = np.sort(distances, kind='stable')[:k]
    return float(nearest.mean())


def novelty_score(subject, population, archive, k=DEFAULT_K):
    """
    Novelty of `subject` against the population vectors (subject already
    excluded) and the archive latents
    """
    subject = np.asarray(subject, dtype=np.float64)
    if subject.ndim != 1:
        raise NoveltyError('subject must be a vector, got shape {}'.format(subject.shape))
    dim = subject.shape[0]

    archive_latents = archive.latents(dim) if isinstance(archive, NoveltyArchive) else archive
    pool = np.concatenate([_as_pool(population, dim), _as_pool(archive_latents, dim)])
    if len(pool) == 0:
        return 0.0
    distances = cdist(subject[None, :], pool)[0]
    return mean_nearest(distances, k)


def score_population(latents, archive, k=DEFAULT_K):
    """
    Novelty of every vector against the others plus the archive; each vector
    is left out of its own pool by position
    """
    latents = np.asarray(latents, dtype=np.float64)
    if latents.size == 0:
        return np.zeros(0)
    dim = latents.shape[1]
    archive_latents = _as_pool(archive.latents(dim), dim)

    within = cdist(latents, latents)
    against_archive = cdist(latents, archive_latents) if len(archive_latents) else np.zeros((len(latents), 0))

    scores = np.zeros(len(latents))
    for i in range(len(latents)):
        distances = np.concatenate([np.delete(within[i], i), against_archive[i]])
        scores[i] = mean_nearest(distances, k)
    return scores


def update_archive(archive, candidates, alpha=DEFAULT_ALPHA, phase=0, generation=0):
    """
    Inserts the top `alpha` candidates by score, skipping lattices already in
    the archive; skipped slots are not refilled.
    `candidates` is a list of (lattice, latent, score).
    """
    ranked = sorted(range(len(candidates)), key=lambda i: -candidates[i][2])
    inserted = 0
    for i in ranked[:alpha]:
        lattice, latent, _ = candidates[i]
        entry = ArchiveEntry(np.asarray(lattice, dtype=np.uint8).copy(), np.asarray(latent), phase, generation)
        if archive.add(entry):
            inserted += 1
    logger.debug('Archived {} of {} candidates, archive size {}'.format(inserted, len(candidates), len(archive)))
    return archive


def reencode_archive(archive, model):
    """
    Assigns every archived lattice the latent vector of the given model
    """
    from .autoencoder import encode_many

    if archive.entries:
        latents = encode_many(model, archive.lattices)
        for entry, latent in zip(archive.entries, latents):
            entry.latent = latent
    return archive


def archive_to_json(archive):
    return [
        {
            'lattice': lattice_to_json(e.lattice),
            'latent': [float(v) for v in e.latent],
            'phase': e.phase,
            'generation': e.generation,
        }
        for e in archive.entries
    ]


def archive_from_json(records):
    entries = []
    for record in records:
        latent = np.asarray(record['latent'], dtype=np.float32)
        entries.append(ArchiveEntry(lattice_from_json(record['lattice']), latent,
                                    int(record['phase']), int(record['generation'])))
    return NoveltyArchive(entries)

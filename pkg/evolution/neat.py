"""
NEAT reproduction for CPPN genomes: innovation bookkeeping, speciation,
crossover, mutation and offspring allocation.

Fitness (novelty) is computed elsewhere and handed to next_generation together
with a feasibility flag per genome. Infeasible genomes score 0 and never breed
while any genome of their generation is feasible.
"""

from dataclasses import dataclass, field, asdict

import logging
import math
import numpy as np

from .cppn import (
    ACTIVATION_NAMES, FIRST_HIDDEN_ID, HIDDEN, INPUT_IDS, OUTPUT, OUTPUT_ID,
    ConnectionGene, GenomeError, NodeGene, creates_cycle, is_acyclic, seed_genome,
)

logger = logging.getLogger(__name__)


@dataclass
class NeatParams:
    population_size: int = 200
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.4
    compatibility_threshold: float = 3.0
    threshold_step: float = 0.1
    min_threshold: float = 0.1
    target_species: int = 10
    weight_mutation_rate: float = 0.8
    weight_replace_rate: float = 0.1
    weight_sigma: float = 0.5
    add_connection_rate: float = 0.1
    add_node_rate: float = 0.05
    activation_mutation_rate: float = 0.1
    crossover_rate: float = 0.75
    disabled_gene_rate: float = 0.75
    elitism: int = 1
    elite_min_species_size: int = 5
    survival_fraction: float = 0.4
    stagnation_limit: int = 20
    add_connection_attempts: int = 20


class InnovationRegistry:
    """
    Hands out innovation numbers and hidden node ids. Identical structural
    mutations within one generation share their numbers.
    """

    def __init__(self, next_innovation=len(INPUT_IDS), next_node_id=FIRST_HIDDEN_ID):
        self.next_innovation = next_innovation
        self.next_node_id = next_node_id
        self._connections = {}
        self._splits = {}

    def new_generation(self):
        self._connections = {}
        self._splits = {}

    def connection(self, source, target):
        key = (source, target)
        if key not in self._connections:
            self._connections[key] = self.next_innovation
            self.next_innovation += 1
        return self._connections[key]

    def split(self, source, target):
        """
        (new node id, innovation source->node, innovation node->target)
        """
        key = (source, target)
        if key not in self._splits:
            self._splits[key] = (self.next_node_id, self.next_innovation, self.next_innovation + 1)
            self.next_node_id += 1
            self.next_innovation += 2
        return self._splits[key]

    def to_dict(self):
        return {'next_innovation': self.next_innovation, 'next_node_id': self.next_node_id}

    @classmethod
    def from_dict(cls, record):
        return cls(record['next_innovation'], record['next_node_id'])


@dataclass
class Species:
    id: int
    representative: object
    members: list = field(default_factory=list)
    staleness: int = 0
    best_fitness: float = -math.inf


class SpeciesSet:
    """
    Live species plus the compatibility threshold, which drifts by
    `threshold_step` each generation to steer the species count toward
    `target_species`.
    """

    def __init__(self, threshold, species=None, next_id=0):
        self.threshold = threshold
        self.species = species or []
        self.next_id = next_id

    def speciate(self, genomes, params, rng):
        """
        Assigns each genome to the first species whose representative is within
        the threshold, else founds a new species. Representatives come from the
        previous generation; new ones are drawn from this generation's members.
        """
        candidates = [Species(s.id, s.representative, [], s.staleness, s.best_fitness) for s in self.species]

        for genome in genomes:
            for species in candidates:
                if compatibility_distance(genome, species.representative, params) < self.threshold:
                    species.members.append(genome)
                    break
            else:
                candidates.append(Species(self.next_id, genome, [genome]))
                self.next_id += 1

        live = [s for s in candidates if s.members]
        for species in live:
            species.representative = species.members[int(rng.integers(len(species.members)))]

        if len(live) < params.target_species:
            self.threshold = max(params.min_threshold, self.threshold - params.threshold_step)
        elif len(live) > params.target_species:
            self.threshold += params.threshold_step

        self.species = live
        return live


def speciate(population, previous_species, params, rng, threshold=None):
    """
    Functional form of SpeciesSet.speciate; returns (species, new threshold)
    """
    next_id = max((s.id for s in previous_species), default=-1) + 1
    species_set = SpeciesSet(
        params.compatibility_threshold if threshold is None else threshold,
        list(previous_species),
        next_id,
    )
    live = species_set.speciate(population, params, rng)
    return live, species_set.threshold


def compatibility_distance(a, b, params):
    """
    (c1 * excess + c2 * disjoint) / N + c3 * mean |weight difference| of matching genes
    """
    genes_a = a.connections
    genes_b = b.connections
    if not genes_a and not genes_b:
        return 0.0

    max_a = max(genes_a, default=-1)
    max_b = max(genes_b, default=-1)

    excess = 0
    disjoint = 0
    weight_diff = 0.0
    matching = 0
    for innovation in set(genes_a) | set(genes_b):
        in_a = innovation in genes_a
        in_b = innovation in genes_b
        if in_a and in_b:
            matching += 1
            weight_diff += abs(genes_a[innovation].weight - genes_b[innovation].weight)
        elif (in_a and innovation > max_b) or (in_b and innovation > max_a):
            excess += 1
        else:
            disjoint += 1

    n = max(len(genes_a), len(genes_b), 1)
    mean_diff = weight_diff / matching if matching else 0.0
    return (params.c1 * excess + params.c2 * disjoint) / n + params.c3 * mean_diff


def crossover(parent_a, parent_b, rng, params=None):
    """
    Matching genes come from either parent at random; disjoint and excess genes
    from the fitter parent, or from each parent with probability 0.5 on a tie.
    A gene disabled in exactly one parent stays disabled with probability
    `disabled_gene_rate`. Genes that would close a cycle are dropped.
    """
    disabled_rate = params.disabled_gene_rate if params else 0.75

    if parent_b.fitness > parent_a.fitness:
        parent_a, parent_b = parent_b, parent_a
    tie = parent_a.fitness == parent_b.fitness

    inherited = []
    for innovation in sorted(set(parent_a.connections) | set(parent_b.connections)):
        gene_a = parent_a.connections.get(innovation)
        gene_b = parent_b.connections.get(innovation)
        if gene_a is not None and gene_b is not None:
            gene = gene_a if rng.random() < 0.5 else gene_b
            gene = ConnectionGene(gene.innovation, gene.source, gene.target, gene.weight, gene.enabled)
            if gene_a.enabled != gene_b.enabled:
                gene.enabled = not (rng.random() < disabled_rate)
            inherited.append(gene)
        elif gene_a is not None:
            if not tie or rng.random() < 0.5:
                inherited.append(ConnectionGene(**asdict(gene_a)))
        elif tie and rng.random() < 0.5:
            inherited.append(ConnectionGene(**asdict(gene_b)))

    nodes = {}
    for node_id in set(parent_a.nodes) | set(parent_b.nodes):
        node_a = parent_a.nodes.get(node_id)
        node_b = parent_b.nodes.get(node_id)
        if node_a is not None and node_b is not None:
            node = node_a if rng.random() < 0.5 else node_b
        else:
            node = node_a or node_b
        nodes[node_id] = NodeGene(node.id, node.kind, node.activation)

    connections = {}
    for gene in inherited:
        if creates_cycle(connections.values(), gene.source, gene.target):
            continue
        connections[gene.innovation] = gene

    # hidden nodes no inherited gene touches are dropped
    used = {c.source for c in connections.values()} | {c.target for c in connections.values()}
    nodes = {
        k: n for k, n in sorted(nodes.items())
        if n.kind != HIDDEN or k in used
    }

    child = parent_a.copy()
    child.nodes = nodes
    child.connections = connections
    child.fitness = 0.0
    return child


def mutate(genome, registry, params, rng):
    """
    Returns a mutated copy: weight perturbation, add connection, add node and
    activation change, each applied independently with its own probability
    """
    child = genome.copy()

    if rng.random() < params.weight_mutation_rate:
        for gene in child.connection_list:
            if rng.random() < params.weight_replace_rate:
                gene.weight = float(rng.uniform(-1.0, 1.0))
            else:
                gene.weight = float(gene.weight + rng.normal(0.0, params.weight_sigma))

    if rng.random() < params.add_connection_rate:
        _mutate_add_connection(child, registry, params, rng)

    if rng.random() < params.add_node_rate:
        _mutate_add_node(child, registry, rng)

    if rng.random() < params.activation_mutation_rate:
        hidden = sorted(k for k, n in child.nodes.items() if n.kind == HIDDEN)
        if hidden:
            node = child.nodes[hidden[int(rng.integers(len(hidden)))]]
            node.activation = ACTIVATION_NAMES[int(rng.integers(len(ACTIVATION_NAMES)))]

    if not is_acyclic(child):    # pragma: no cover
        raise GenomeError('mutation produced a cyclic genome')
    return child


def _mutate_add_connection(genome, registry, params, rng):
    sources = sorted(k for k, n in genome.nodes.items() if n.kind != OUTPUT)
    targets = sorted(k for k in genome.nodes if k not in INPUT_IDS)
    existing = {(c.source, c.target) for c in genome.connections.values()}

    for _ in range(params.add_connection_attempts):
        source = sources[int(rng.integers(len(sources)))]
        target = targets[int(rng.integers(len(targets)))]
        if (source, target) in existing:
            continue
        if creates_cycle(genome.connections.values(), source, target):
            continue
        innovation = registry.connection(source, target)
        genome.connections[innovation] = ConnectionGene(
            innovation, source, target, float(rng.uniform(-1.0, 1.0)), True,
        )
        return True
    return False


def _mutate_add_node(genome, registry, rng):
    enabled = [c for c in genome.connection_list if c.enabled]
    if not enabled:
        return False

    old = enabled[int(rng.integers(len(enabled)))]
    node_id, innovation_in, innovation_out = registry.split(old.source, old.target)
    if node_id in genome.nodes:
        # this genome already split the same connection this generation
        return False

    old.enabled = False
    activation = ACTIVATION_NAMES[int(rng.integers(len(ACTIVATION_NAMES)))]
    genome.nodes[node_id] = NodeGene(node_id, HIDDEN, activation)
    genome.connections[innovation_in] = ConnectionGene(innovation_in, old.source, node_id, 1.0, True)
    genome.connections[innovation_out] = ConnectionGene(innovation_out, node_id, old.target, old.weight, True)
    return True


def allocate_offspring(species, fitness, feasible, population_size):
    """
    Largest-remainder split of the population over species in proportion to
    shared fitness (member fitness over species size). Species with no
    feasible member get nothing; if all shared fitness is 0 the split follows
    feasible member counts. `fitness` and `feasible` are keyed by id(genome).
    Returns {species id: offspring count}.
    """
    shares = {}
    for s in species:
        size = len(s.members)
        shares[s.id] = sum(fitness[id(g)] for g in s.members if feasible[id(g)]) / size

    eligible = [s for s in species if any(feasible[id(g)] for g in s.members)]
    if not eligible:
        return {s.id: 0 for s in species}

    total = sum(shares[s.id] for s in eligible)
    if total <= 0:
        shares = {s.id: float(sum(1 for g in s.members if feasible[id(g)])) for s in species}
        total = sum(shares[s.id] for s in eligible)

    raw = [(s.id, population_size * shares[s.id] / total) for s in eligible]
    quota = {s.id: 0 for s in species}
    for sid, value in raw:
        quota[sid] = int(math.floor(value))

    leftover = population_size - sum(quota.values())
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i][1] - math.floor(raw[i][1])), i))
    for i in order[:leftover]:
        quota[raw[i][0]] += 1
    return quota


class NeatPopulation:
    """
    One evolving population: genomes of the current generation, species and
    innovation bookkeeping
    """

    def __init__(self, genomes, params, species_set=None, registry=None, generation=0):
        self.genomes = genomes
        self.params = params
        self.species_set = species_set or SpeciesSet(params.compatibility_threshold)
        self.registry = registry or InnovationRegistry()
        self.generation = generation

    @classmethod
    def seeded(cls, params, rng):
        genomes = [seed_genome(rng) for _ in range(params.population_size)]
        return cls(genomes, params)

    def __len__(self):
        return len(self.genomes)


def next_generation(population, fitness, feasible, params, registry, rng):
    """
    Breeds the next generation from evaluated genomes.
    `fitness` and `feasible` are per-genome lists aligned with population.genomes.
    """
    genomes = population.genomes
    size = len(genomes)

    scores = {}
    flags = {}
    for genome, score, ok in zip(genomes, fitness, feasible):
        genome.fitness = float(score) if ok else 0.0
        scores[id(genome)] = genome.fitness
        flags[id(genome)] = bool(ok)

    registry.new_generation()
    generation = population.generation + 1

    if not any(flags.values()):
        logger.warning('Degenerate generation {}: no feasible genomes, breeding mutated copies of random members'.format(
            population.generation))
        offspring = [mutate(genomes[int(rng.integers(size))], registry, params, rng) for _ in range(size)]
        for genome in offspring:
            genome.fitness = 0.0
            genome.generation = generation
        return NeatPopulation(offspring, params, population.species_set, registry, generation)

    species = population.species_set.speciate(genomes, params, rng)
    _update_staleness(species, scores, flags)
    species = _remove_stagnant(species, flags, params)
    population.species_set.species = species

    quota = allocate_offspring(species, scores, flags, size)

    offspring = []
    for s in species:
        count = quota[s.id]
        if count == 0:
            continue
        ranked = sorted((g for g in s.members if flags[id(g)]), key=lambda g: -g.fitness)

        if len(s.members) >= params.elite_min_species_size:
            for elite in ranked[:min(params.elitism, count)]:
                offspring.append(elite.copy())
                count -= 1

        cutoff = max(1, int(math.ceil(params.survival_fraction * len(ranked))))
        parents = ranked[:cutoff]
        for _ in range(count):
            mother = parents[int(rng.integers(len(parents)))]
            if len(parents) > 1 and rng.random() < params.crossover_rate:
                father = parents[int(rng.integers(len(parents)))]
                child = crossover(mother, father, rng, params)
            else:
                child = mother.copy()
            offspring.append(mutate(child, registry, params, rng))

    for genome in offspring:
        genome.fitness = 0.0
        genome.generation = generation

    return NeatPopulation(offspring, params, population.species_set, registry, generation)


def _update_staleness(species, scores, flags):
    for s in species:
        best = max((scores[id(g)] for g in s.members if flags[id(g)]), default=-math.inf)
        if best > s.best_fitness:
            s.best_fitness = best
            s.staleness = 0
        else:
            s.staleness += 1


def _remove_stagnant(species, flags, params):
    """
    Drops species that have not improved for `stagnation_limit` generations,
    unless that would leave no species able to breed
    """
    kept = [s for s in species if s.staleness < params.stagnation_limit]
    breeding = [s for s in kept if any(flags[id(g)] for g in s.members)]
    if breeding:
        removed = len(species) - len(kept)
        if removed:
            logger.debug('Removed {} stagnant species'.format(removed))
        return kept

    return species

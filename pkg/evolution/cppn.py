"""
Compositional pattern producing networks over the voxel lattice.

A genome is a feed-forward graph with five inputs (x, y, z, r, bias) and one
sigmoid output. Querying it at every voxel centre paints the boolean hull.
"""

from dataclasses import dataclass, field, replace
from scipy.special import expit

import logging
import numpy as np

from .errors import Error

logger = logging.getLogger(__name__)

INPUT_NAMES = ('x', 'y', 'z', 'r', 'bias')
INPUT_IDS = tuple(range(len(INPUT_NAMES)))
OUTPUT_ID = len(INPUT_NAMES)
FIRST_HIDDEN_ID = OUTPUT_ID + 1

INPUT = 'input'
HIDDEN = 'hidden'
OUTPUT = 'output'

FILL_THRESHOLD = 0.5


def _gaussian(x):
    return np.exp(-x * x)


ACTIVATIONS = {
    'sigmoid': expit,
    'tanh': np.tanh,
    'sine': np.sin,
    'gaussian': _gaussian,
    'abs': np.abs,
}
ACTIVATION_NAMES = tuple(ACTIVATIONS)


class GenomeError(Error):
    """Exception raised on cyclic or malformed genomes."""
    pass


@dataclass
class NodeGene:
    id: int
    kind: str
    activation: str = 'sigmoid'


@dataclass
class ConnectionGene:
    innovation: int
    source: int
    target: int
    weight: float
    enabled: bool = True


@dataclass
class CppnGenome:
    nodes: dict = field(default_factory=dict)          # id -> NodeGene
    connections: dict = field(default_factory=dict)    # innovation -> ConnectionGene
    fitness: float = 0.0
    generation: int = 0

    @property
    def node_list(self):
        return [self.nodes[k] for k in sorted(self.nodes)]

    @property
    def connection_list(self):
        return [self.connections[k] for k in sorted(self.connections)]

    def copy(self):
        return CppnGenome(
            nodes={k: replace(n) for k, n in self.nodes.items()},
            connections={k: replace(c) for k, c in self.connections.items()},
            fitness=self.fitness,
            generation=self.generation,
        )

    def structure(self):
        """
        Comparable view of the genes, ignoring fitness and generation
        """
        return (
            tuple((n.id, n.kind, n.activation) for n in self.node_list),
            tuple((c.innovation, c.source, c.target, c.weight, c.enabled) for c in self.connection_list),
        )


def base_nodes():
    nodes = {i: NodeGene(i, INPUT, 'sigmoid') for i in INPUT_IDS}
    nodes[OUTPUT_ID] = NodeGene(OUTPUT_ID, OUTPUT, 'sigmoid')
    return nodes


def seed_genome(seed):
    """
    Inputs fully connected to the output, weights ~ Uniform(-1, 1), no hidden
    nodes. Innovation i is input i -> output in every seed genome.
    `seed` is an int or a numpy Generator.
    """
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-1.0, 1.0, size=len(INPUT_IDS))
    connections = {
        i: ConnectionGene(i, i, OUTPUT_ID, float(w), True)
        for i, w in zip(INPUT_IDS, weights)
    }
    return CppnGenome(nodes=base_nodes(), connections=connections)


def creates_cycle(connections, source, target):
    """
    True if adding source -> target to the connection genes closes a directed cycle
    """
    if source == target:
        return True

    outgoing = {}
    for c in connections:
        outgoing.setdefault(c.source, []).append(c.target)

    # can we already reach source from target?
    stack = [target]
    seen = set()
    while stack:
        node = stack.pop()
        if node == source:
            return True
        if node in seen:
            continue
        seen.add(node)
        stack.extend(outgoing.get(node, ()))
    return False


def topological_order(genome):
    """
    Kahn ordering over all connection genes, enabled or not, ties by node id
    """
    indegree = {k: 0 for k in genome.nodes}
    outgoing = {k: [] for k in genome.nodes}
    for c in genome.connections.values():
        if c.source not in genome.nodes or c.target not in genome.nodes:
            raise GenomeError('connection {} references a missing node'.format(c.innovation))
        indegree[c.target] += 1
        outgoing[c.source].append(c.target)

    ready = sorted(k for k, d in indegree.items() if d == 0)
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for target in outgoing[node]:
            indegree[target] -= 1
            if indegree[target] == 0:
                ready.append(target)
        ready.sort()

    if len(order) != len(genome.nodes):
        raise GenomeError('genome contains a directed cycle')
    return order


def is_acyclic(genome):
    try:
        topological_order(genome)
    except GenomeError:
        return False
    return True


def _activate(genome, inputs):
    """
    Feed-forward pass; `inputs` holds one value (scalar or array) per input id
    """
    incoming = {}
    for c in genome.connection_list:
        if c.enabled:
            incoming.setdefault(c.target, []).append(c)

    values = {}
    for node_id in topological_order(genome):
        node = genome.nodes[node_id]
        if node.kind == INPUT:
            values[node_id] = inputs[node_id]
            continue
        total = 0.0
        for c in incoming.get(node_id, ()):
            total = total + c.weight * values[c.source]
        activation = 'sigmoid' if node.kind == OUTPUT else node.activation
        values[node_id] = ACTIVATIONS[activation](np.asarray(total, dtype=np.float64))
    return values[OUTPUT_ID]


def cppn_inputs(x, y, z):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return {
        0: x,
        1: y,
        2: z,
        3: np.sqrt(x * x + z * z),
        4: np.ones_like(x),
    }


def eval_network(genome, coords):
    """
    Output of the genome at one normalised (x, y, z) point, in (0, 1)
    """
    x, y, z = coords
    return float(_activate(genome, cppn_inputs(x, y, z)))


def normalized_axis(size):
    if size == 1:
        return np.zeros(1)
    return 2.0 * np.arange(size) / (size - 1) - 1.0


def evaluate_grid(genome, dims):
    """
    eval_network at every voxel centre, indexed (x, y, z)
    """
    if any(d <= 0 for d in dims):
        raise GenomeError('lattice dims must be positive, got {}'.format(dims))
    xs, ys, zs = np.meshgrid(*(normalized_axis(d) for d in dims), indexing='ij')
    out = _activate(genome, cppn_inputs(xs, ys, zs))
    return np.broadcast_to(out, tuple(dims)).astype(np.float64)


def generate_hull(genome, dims):
    return evaluate_grid(genome, dims) > FILL_THRESHOLD


def genome_to_dict(genome):
    return {
        'nodes': [
            {'id': n.id, 'kind': n.kind, 'activation': n.activation}
            for n in genome.node_list
        ],
        'connections': [
            {
                'innovation': c.innovation,
                'source': c.source,
                'target': c.target,
                'weight': c.weight,
                'enabled': c.enabled,
            }
            for c in genome.connection_list
        ],
        'fitness': genome.fitness,
        'generation': genome.generation,
    }


def genome_from_dict(record):
    from .serializers import GenomeSerializer, validated

    data = validated(GenomeSerializer, record, 'genome')
    genome = CppnGenome(
        nodes={n['id']: NodeGene(n['id'], n['kind'], n['activation']) for n in data['nodes']},
        connections={
            c['innovation']: ConnectionGene(c['innovation'], c['source'], c['target'], c['weight'], c['enabled'])
            for c in data['connections']
        },
        fitness=data['fitness'],
        generation=data['generation'],
    )
    check_genome(genome)
    return genome


def check_genome(genome):
    """
    Raises GenomeError unless the genome has the fixed input/output layout and
    no cycles
    """
    inputs = sorted(k for k, n in genome.nodes.items() if n.kind == INPUT)
    outputs = [k for k, n in genome.nodes.items() if n.kind == OUTPUT]
    if tuple(inputs) != INPUT_IDS or outputs != [OUTPUT_ID]:
        raise GenomeError('genome must have inputs {} and output {}'.format(INPUT_IDS, OUTPUT_ID))
    if genome.nodes[OUTPUT_ID].activation != 'sigmoid':
        raise GenomeError('output node activation must be sigmoid')
    for c in genome.connections.values():
        if c.target in INPUT_IDS:
            raise GenomeError('connection {} feeds an input node'.format(c.innovation))
    topological_order(genome)

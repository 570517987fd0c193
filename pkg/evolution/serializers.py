from rest_framework import serializers

from .cppn import ACTIVATION_NAMES, HIDDEN, INPUT, OUTPUT
from .errors import ConfigError, flatten_errors

SCHEMA_VERSION = 1
STRATEGIES = ('static', 'random', 'latest_set', 'full_history', 'novelty_archive')


def validated(serializer_class, record, name):
    """
    Runs a serializer over a plain record and returns its validated data as a dict.
    Raises ConfigError with dotted field names on failure.
    """
    serializer = serializer_class(data=record)
    if not serializer.is_valid():
        errors = flatten_errors(serializer.errors)
        detail = '; '.join('{}: {}'.format(k, ' '.join(v)) for k, v in sorted(errors.items()))
        raise ConfigError('invalid {}: {}'.format(name, detail), errors)
    return _plain(serializer.validated_data)


def _plain(data):
    if isinstance(data, dict):
        return {k: _plain(v) for k, v in data.items()}
    if isinstance(data, list):
        return [_plain(v) for v in data]
    return data


class NodeGeneSerializer(serializers.Serializer):
    id = serializers.IntegerField(min_value=0)
    kind = serializers.ChoiceField(choices=[INPUT, HIDDEN, OUTPUT])
    activation = serializers.ChoiceField(choices=list(ACTIVATION_NAMES))


class ConnectionGeneSerializer(serializers.Serializer):
    innovation = serializers.IntegerField(min_value=0)
    source = serializers.IntegerField(min_value=0)
    target = serializers.IntegerField(min_value=0)
    weight = serializers.FloatField()
    enabled = serializers.BooleanField()


class GenomeSerializer(serializers.Serializer):
    nodes = NodeGeneSerializer(many=True)
    connections = ConnectionGeneSerializer(many=True)
    fitness = serializers.FloatField(default=0.0)
    generation = serializers.IntegerField(min_value=0, default=0)

    def validate_nodes(self, value):
        ids = [n['id'] for n in value]
        if len(ids) != len(set(ids)):
            raise serializers.ValidationError('Node ids must be unique.')
        return value

    def validate_connections(self, value):
        innovations = [c['innovation'] for c in value]
        if len(innovations) != len(set(innovations)):
            raise serializers.ValidationError('Innovation numbers must be unique.')
        return value


class NeatParamsSerializer(serializers.Serializer):
    population_size = serializers.IntegerField(min_value=2, default=200)
    c1 = serializers.FloatField(min_value=0.0, default=1.0)
    c2 = serializers.FloatField(min_value=0.0, default=1.0)
    c3 = serializers.FloatField(min_value=0.0, default=0.4)
    compatibility_threshold = serializers.FloatField(min_value=0.0, default=3.0)
    threshold_step = serializers.FloatField(min_value=0.0, default=0.1)
    min_threshold = serializers.FloatField(min_value=0.0, default=0.1)
    target_species = serializers.IntegerField(min_value=1, default=10)
    weight_mutation_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.8)
    weight_replace_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.1)
    weight_sigma = serializers.FloatField(min_value=0.0, default=0.5)
    add_connection_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.1)
    add_node_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.05)
    activation_mutation_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.1)
    crossover_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.75)
    disabled_gene_rate = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.75)
    elitism = serializers.IntegerField(min_value=0, default=1)
    elite_min_species_size = serializers.IntegerField(min_value=1, default=5)
    survival_fraction = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.4)
    stagnation_limit = serializers.IntegerField(min_value=1, default=20)
    add_connection_attempts = serializers.IntegerField(min_value=1, default=20)


class AutoencoderParamsSerializer(serializers.Serializer):
    latent_dim = serializers.IntegerField(min_value=1, default=256)
    encoder_channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                             default=[32, 64, 128])
    decoder_channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                             default=[64, 32, 16])
    epochs = serializers.IntegerField(min_value=0, default=100)
    batch_size = serializers.IntegerField(min_value=1, default=64)
    learning_rate = serializers.FloatField(min_value=0.0, default=1e-3)
    beta1 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    beta2 = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.999)
    eps = serializers.FloatField(min_value=0.0, default=1e-8)

    def validate(self, data):
        # the decoder upsamples once per encoder pooling step
        if len(data['encoder_channels']) != len(data['decoder_channels']):
            raise serializers.ValidationError('encoder_channels and decoder_channels must have the same length.')
        return data


class MetricsParamsSerializer(serializers.Serializer):
    window = serializers.IntegerField(min_value=1, max_value=3, default=2)
    epsilon = serializers.FloatField(min_value=0.0, default=1e-6)


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Run config JSON. The top-level population_size, latent_dim, epochs and
    batch take precedence over the same keys inside `neat` / `autoencoder`.
    """
    schema_version = serializers.ChoiceField(choices=[SCHEMA_VERSION])
    strategy = serializers.ChoiceField(
        choices=list(STRATEGIES),
        error_messages={'invalid_choice': '"{input}" is not a valid strategy; choose one of ' + ', '.join(STRATEGIES)},
    )
    iterations = serializers.IntegerField(min_value=1, default=10)
    populations = serializers.IntegerField(min_value=1, default=10)
    population_size = serializers.IntegerField(min_value=2, default=200)
    generations_per_phase = serializers.IntegerField(min_value=1, default=100)
    k = serializers.IntegerField(min_value=1, default=15)
    alpha = serializers.IntegerField(min_value=1, default=3)
    latent_dim = serializers.IntegerField(min_value=1, default=256)
    epochs = serializers.IntegerField(min_value=1, default=100)
    batch = serializers.IntegerField(min_value=1, default=64)
    seed = serializers.IntegerField(min_value=0, default=0)
    dims = serializers.ListField(child=serializers.IntegerField(min_value=2), min_length=3, max_length=3,
                                 default=[20, 20, 20])
    latest_set_size = serializers.IntegerField(min_value=1, default=100)
    diversity_interval = serializers.IntegerField(min_value=1, default=1)
    neat = NeatParamsSerializer(required=False)
    autoencoder = AutoencoderParamsSerializer(required=False)
    metrics = MetricsParamsSerializer(required=False)

    def validate(self, data):
        window = data.get('metrics', {}).get('window', 2)
        if any(d < window for d in data['dims']):
            raise serializers.ValidationError({'dims': ['Every dimension must be at least the metrics window.']})
        return data

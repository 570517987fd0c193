"""
3D convolutional autoencoder over one-hot material lattices.

Encoder: three (conv 3x3x3 + ReLU + 2x2x2 ceil max-pool) blocks taking
20 -> 10 -> 5 -> 3, then a dense layer to the latent vector.
Decoder: dense back to (C, 3, 3, 3), three (upsample x2 + conv + ReLU) blocks
taking 3 -> 6 -> 12 -> 24, a 1x1x1 conv to the five material logits and a
centre crop to 20.
"""

from dataclasses import dataclass, field, asdict

import hashlib
import io
import logging
import math

import numpy as np

from . import tensor_nn as nn
from .errors import Error
from .voxel_core import DEFAULT_DIMS, NUM_MATERIALS, LatticeError, from_onehot, to_onehot

logger = logging.getLogger(__name__)


class TrainingError(Error):
    """Exception raised when a model cannot be trained."""
    pass


@dataclass
class AutoencoderParams:
    latent_dim: int = 256
    encoder_channels: list = field(default_factory=lambda: [32, 64, 128])
    decoder_channels: list = field(default_factory=lambda: [64, 32, 16])
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _pooled(size, times):
    for _ in range(times):
        size = math.ceil(size / 2)
    return size


class AutoencoderModel:

    def __init__(self, params=None, seed=0, dims=DEFAULT_DIMS):
        self.params = params or AutoencoderParams()
        self.seed = seed
        self.dims = tuple(dims)
        self.history = []
        self.fingerprint = None
        self._build()
        self.initialize(seed)

    def _build(self):
        p = self.params
        widths = [NUM_MATERIALS] + list(p.encoder_channels)
        self.code_dims = tuple(_pooled(d, len(p.encoder_channels)) for d in self.dims)
        bottleneck = widths[-1] * int(np.prod(self.code_dims))

        self.encoder = []
        for c_in, c_out in zip(widths[:-1], widths[1:]):
            self.encoder += [nn.Conv3d(c_in, c_out), nn.ReLU(), nn.MaxPool3d(2)]
        self.encoder += [nn.Flatten(), nn.Dense(bottleneck, p.latent_dim)]

        self.decoder = [
            nn.Dense(p.latent_dim, bottleneck),
            nn.ReLU(),
            nn.Reshape((widths[-1],) + self.code_dims),
        ]
        c_in = widths[-1]
        for c_out in p.decoder_channels:
            self.decoder += [nn.Upsample3d(2), nn.Conv3d(c_in, c_out), nn.ReLU()]
            c_in = c_out
        self.decoder += [nn.Conv3d(c_in, NUM_MATERIALS, kernel_size=1), nn.CenterCrop(self.dims)]

    @property
    def layers(self):
        return self.encoder + self.decoder

    def named_states(self):
        named = []
        for part, layers in (('encoder', self.encoder), ('decoder', self.decoder)):
            for i, layer in enumerate(layers):
                if layer.state is not None:
                    named.append(('{}.{}.{}'.format(part, i, layer.name), layer.state))
        return named

    def initialize(self, seed):
        """
        Fresh fan-scaled random weights, zero biases and optimizer state
        """
        self.seed = seed
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if layer.state is not None:
                layer.init(rng)
                state = layer.state
                for store in (state.m, state.v, state.grads):
                    for arr in store.values():
                        arr.fill(0)
                state.step = 0
        self.history = []
        self.fingerprint = None

    def to_bytes(self):
        return nn.weights_to_bytes(self.named_states())

    def load_bytes(self, data):
        nn.load_weights(self.named_states(), io.BytesIO(data))

    def manifest(self):
        return {
            'architecture': {
                'dims': list(self.dims),
                'params': asdict(self.params),
            },
            'seed': self.seed,
            'history': list(self.history),
            'data_fingerprint': self.fingerprint,
            'weights_sha256': model_fingerprint(self),
        }


def model_fingerprint(model):
    return hashlib.sha256(model.to_bytes()).hexdigest()


def dataset_fingerprint(lattices):
    digest = hashlib.sha256()
    for lattice in lattices:
        digest.update(np.ascontiguousarray(lattice, dtype=np.uint8).tobytes())
    return digest.hexdigest()


def _check_dims(model, lattices):
    for lattice in lattices:
        if np.shape(lattice) != model.dims:
            raise LatticeError('lattice dims {} do not match model dims {}'.format(np.shape(lattice), model.dims))


def _stack_lattices(model, lattices):
    _check_dims(model, lattices)
    return np.stack([np.asarray(lattice, dtype=np.uint8) for lattice in lattices])


def _batch_onehot(model, lattices):
    _check_dims(model, lattices)
    return np.stack([to_onehot(lattice) for lattice in lattices])


def encode_many(model, lattices, batch_size=None):
    """
    Latent vectors (N, latent_dim) for a list of lattices
    """
    if not len(lattices):
        return np.zeros((0, model.params.latent_dim), dtype=np.float32)
    batch_size = batch_size or model.params.batch_size
    out = []
    for start in range(0, len(lattices), batch_size):
        x = _batch_onehot(model, lattices[start:start + batch_size])
        z, _ = nn.forward_chain(model.encoder, x)
        out.append(z)
    return np.concatenate(out)


def encode(model, lattice):
    return encode_many(model, [lattice])[0]


def decode(model, latents):
    """
    Material logits (N, 5, x, y, z) for latent vectors (N, latent_dim)
    """
    logits, _ = nn.forward_chain(model.decoder, np.asarray(latents, dtype=np.float32))
    return logits


def reconstruct_many(model, lattices, batch_size=None):
    batch_size = batch_size or model.params.batch_size
    out = []
    for start in range(0, len(lattices), batch_size):
        logits = decode(model, encode_many(model, lattices[start:start + batch_size]))
        out.extend(from_onehot(l) for l in logits)
    return out


def reconstruct(model, lattice):
    return reconstruct_many(model, [lattice])[0]


def reconstruction_errors(model, lattices):
    """
    Per-lattice percentage of misclassified voxels
    """
    errors = []
    for original, rebuilt in zip(lattices, reconstruct_many(model, lattices)):
        errors.append(100.0 * float(np.mean(np.asarray(original) != rebuilt)))
    return errors


def reconstruction_error(model, lattices):
    if not len(lattices):
        raise TrainingError('reconstruction error needs at least one lattice')
    return float(np.mean(reconstruction_errors(model, lattices)))


def dataset_reconstruction_report(model, datasets):
    """
    {dataset name: {'mean', 'std', 'ci95', 'count'}} of reconstruction error
    """
    report = {}
    for name, lattices in datasets.items():
        errors = np.asarray(reconstruction_errors(model, lattices), dtype=np.float64)
        report[name] = {
            'mean': float(errors.mean()) if errors.size else 0.0,
            'std': float(errors.std()) if errors.size else 0.0,
            'ci95': float(1.96 * errors.std() / math.sqrt(errors.size)) if errors.size else 0.0,
            'count': int(errors.size),
        }
    return report


def train(model, lattices, epochs=None, batch_size=None, rng=None):
    """
    Re-initialises the model from its seed, then runs minibatch Adam on
    categorical cross-entropy, reshuffling every epoch. The final partial batch
    is kept. Per-epoch mean loss goes to model.history.
    """
    if not len(lattices):
        raise TrainingError('training set is empty')
    p = model.params
    epochs = p.epochs if epochs is None else epochs
    batch_size = batch_size or p.batch_size
    rng = rng if rng is not None else np.random.default_rng(model.seed)

    model.initialize(model.seed)
    data = _stack_lattices(model, lattices)
    eye = np.eye(NUM_MATERIALS, dtype=np.float32)
    states = [layer.state for layer in model.layers if layer.state is not None]
    logger.info('Training autoencoder on {} lattices for {} epochs'.format(len(lattices), epochs))

    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(order), batch_size):
            # one-hot per batch keeps large training sets as uint8
            batch = np.ascontiguousarray(eye[data[order[start:start + batch_size]]].transpose(0, 4, 1, 2, 3))
            for state in states:
                state.zero_grad()
            z, enc_caches = nn.forward_chain(model.encoder, batch)
            logits, dec_caches = nn.forward_chain(model.decoder, z)
            loss, grad = nn.softmax_ce_loss(logits, batch)
            grad = nn.backward_chain(model.decoder, dec_caches, grad)
            nn.backward_chain(model.encoder, enc_caches, grad)
            for state in states:
                nn.adam_step(state, p.learning_rate, p.beta1, p.beta2, p.eps)
            total += loss * len(batch)
        epoch_loss = total / len(data)
        model.history.append(epoch_loss)
        logger.debug('epoch={} loss={:.6f}'.format(epoch, epoch_loss))

    model.fingerprint = dataset_fingerprint(lattices)
    return model


def randomize(model, seed):
    """
    Replaces every weight with fresh random values and clears training history
    """
    model.initialize(seed)
    return model


def model_from_manifest(manifest, weights):
    from .serializers import AutoencoderParamsSerializer, validated

    params = AutoencoderParams(**validated(AutoencoderParamsSerializer, manifest['architecture']['params'],
                                           'architecture.params'))
    model = AutoencoderModel(params, seed=manifest['seed'], dims=manifest['architecture']['dims'])
    model.load_bytes(weights)
    model.history = list(manifest.get('history', []))
    model.fingerprint = manifest.get('data_fingerprint')
    return model

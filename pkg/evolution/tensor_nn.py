"""
Small differentiable kernel for 5D tensors (batch, channels, x, y, z).

Every kernel is a pair of plain functions, forward and backward. Layer objects
wrap them and keep their parameters in a LayerState; forward returns the cache
needed by backward and layers hold no per-call state.
"""

import io
import json
import logging
import math
import struct

import numpy as np

from .errors import Error

logger = logging.getLogger(__name__)

WEIGHTS_MAGIC = b'VXNW'
WEIGHTS_VERSION = 1


class TensorShapeError(Error):
    """Exception raised when tensor shapes do not line up."""
    pass


class LossTargetError(Error):
    """Exception raised when a loss target is not one-hot."""
    pass


def _check_ndim(x, ndim, what):
    if x.ndim != ndim:
        raise TensorShapeError('{} expects a {}D tensor, got shape {}'.format(what, ndim, x.shape))


# Convolution

def conv3d_forward(x, weights, bias):
    """
    Same-padded stride-1 3D convolution.
    x (N, C, X, Y, Z), weights (O, C, k, k, k) with odd k, bias (O,)
    """
    _check_ndim(x, 5, 'conv3d')
    _check_ndim(weights, 5, 'conv3d weights')
    out_channels, in_channels, k = weights.shape[0], weights.shape[1], weights.shape[2]
    if x.shape[1] != in_channels:
        raise TensorShapeError('conv3d input has {} channels, weights expect {}'.format(x.shape[1], in_channels))
    if weights.shape[2:] != (k, k, k) or k % 2 == 0:
        raise TensorShapeError('conv3d kernel must be cubic with odd size, got {}'.format(weights.shape[2:]))
    if bias.shape != (out_channels,):
        raise TensorShapeError('conv3d bias must have shape ({},), got {}'.format(out_channels, bias.shape))

    n, _, sx, sy, sz = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))

    out = np.zeros((n, sx, sy, sz, out_channels), dtype=x.dtype)
    # one matmul per kernel offset
    for i in range(k):
        for j in range(k):
            for l in range(k):
                window = xp[:, :, i:i + sx, j:j + sy, l:l + sz]
                out += np.tensordot(window, weights[:, :, i, j, l], axes=([1], [1]))
    out = np.moveaxis(out, 4, 1) + bias.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(out, dtype=x.dtype), xp


def conv3d_backward(grad_out, xp, weights):
    """
    Returns (grad_input, grad_weights, grad_bias); xp is the padded input cached
    by conv3d_forward
    """
    k = weights.shape[2]
    pad = k // 2
    n, _, sx, sy, sz = grad_out.shape
    if grad_out.shape[1] != weights.shape[0]:
        raise TensorShapeError('conv3d gradient has {} channels, weights produce {}'.format(
            grad_out.shape[1], weights.shape[0]))

    grad_bias = grad_out.sum(axis=(0, 2, 3, 4))
    grad_weights = np.zeros_like(weights)
    grad_xp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                window = xp[:, :, i:i + sx, j:j + sy, l:l + sz]
                grad_weights[:, :, i, j, l] = np.tensordot(grad_out, window, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
                contrib = np.tensordot(grad_out, weights[:, :, i, j, l], axes=([1], [0]))
                grad_xp[:, :, i:i + sx, j:j + sy, l:l + sz] += np.moveaxis(contrib, 4, 1)

    grad_input = grad_xp[:, :, pad:pad + sx, pad:pad + sy, pad:pad + sz]
    return np.ascontiguousarray(grad_input), grad_weights, grad_bias


# Pooling and resampling

def maxpool3d(x, size=2):
    """
    Ceil-mode max pooling with window = stride = size; a trailing partial window
    pools over what is there. Returns (output, argmax cache).
    """
    _check_ndim(x, 5, 'maxpool3d')
    n, c, sx, sy, sz = x.shape
    ox, oy, oz = (math.ceil(d / size) for d in (sx, sy, sz))
    padded = np.pad(
        x,
        ((0, 0), (0, 0), (0, ox * size - sx), (0, oy * size - sy), (0, oz * size - sz)),
        constant_values=-np.inf,
    )
    blocks = padded.reshape(n, c, ox, size, oy, size, oz, size)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, ox, oy, oz, size ** 3)
    argmax = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), (argmax, x.shape, size)


def maxpool3d_backward(grad_out, cache):
    """
    Routes each output gradient to the input voxel that won its window
    """
    argmax, shape, size = cache
    n, c, sx, sy, sz = shape
    ox, oy, oz = grad_out.shape[2:]
    blocks = np.zeros((n, c, ox, oy, oz, size ** 3), dtype=grad_out.dtype)
    np.put_along_axis(blocks, argmax[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(n, c, ox, oy, oz, size, size, size).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    grad = blocks.reshape(n, c, ox * size, oy * size, oz * size)
    return np.ascontiguousarray(grad[:, :, :sx, :sy, :sz])


def upsample_nearest(x, factor=2):
    _check_ndim(x, 5, 'upsample')
    return x.repeat(factor, axis=2).repeat(factor, axis=3).repeat(factor, axis=4)


def upsample_nearest_backward(grad_out, factor=2):
    n, c, sx, sy, sz = grad_out.shape
    blocks = grad_out.reshape(n, c, sx // factor, factor, sy // factor, factor, sz // factor, factor)
    return blocks.sum(axis=(3, 5, 7))


def center_crop(x, dims):
    _check_ndim(x, 5, 'center_crop')
    starts = [(have - want) // 2 for have, want in zip(x.shape[2:], dims)]
    if any(s < 0 for s in starts):
        raise TensorShapeError('cannot crop shape {} to {}'.format(x.shape[2:], dims))
    (ax, ay, az), (dx, dy, dz) = starts, dims
    return x[:, :, ax:ax + dx, ay:ay + dy, az:az + dz]


def center_crop_backward(grad_out, shape):
    grad = np.zeros(shape, dtype=grad_out.dtype)
    starts = [(have - want) // 2 for have, want in zip(shape[2:], grad_out.shape[2:])]
    (ax, ay, az), (dx, dy, dz) = starts, grad_out.shape[2:]
    grad[:, :, ax:ax + dx, ay:ay + dy, az:az + dz] = grad_out
    return grad


# Dense

def dense_forward(x, weights, bias):
    """
    x (N, F) @ weights (F, O) + bias (O,)
    """
    _check_ndim(x, 2, 'dense')
    if x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise TensorShapeError('dense input {} does not fit weights {} / bias {}'.format(
            x.shape, weights.shape, bias.shape))
    return x @ weights + bias


def dense_backward(grad_out, x, weights):
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise TensorShapeError('dense gradient shape {} does not match output ({}, {})'.format(
            grad_out.shape, x.shape[0], weights.shape[1]))
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0)


# Loss

def softmax(logits, axis=1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce_loss(logits, target):
    """
    Categorical cross-entropy over the channel axis, averaged over batch and
    voxels. Returns (loss, grad_logits).
    """
    if logits.shape != target.shape:
        raise TensorShapeError('logits {} and target {} differ in shape'.format(logits.shape, target.shape))
    if not np.all((target == 0) | (target == 1)) or not np.all(target.sum(axis=1) == 1):
        raise LossTargetError('target must be one-hot along the channel axis')

    count = logits.size // logits.shape[1]
    shifted = logits.astype(np.float64) - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(log_probs * target).sum() / count)
    grad = (np.exp(log_probs) - target) / count
    return loss, grad.astype(logits.dtype)


# Layers

class LayerState:
    """
    Parameters of one layer with their gradients and Adam moments
    """

    def __init__(self, params):
        self.params = params
        self.grads = {k: np.zeros_like(v) for k, v in params.items()}
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step = 0

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    name = 'layer'
    state = None

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError

    def init(self, rng):
        pass


class Conv3d(Layer):
    name = 'conv3d'

    def __init__(self, in_channels, out_channels, kernel_size=3, dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        k = kernel_size
        self.state = LayerState({
            'weights': np.zeros((out_channels, in_channels, k, k, k), dtype=dtype),
            'bias': np.zeros(out_channels, dtype=dtype),
        })

    def init(self, rng):
        k3 = self.kernel_size ** 3
        w = self.state.params['weights']
        w[...] = glorot_uniform(rng, w.shape, self.in_channels * k3, self.out_channels * k3, w.dtype)
        self.state.params['bias'].fill(0)

    def forward(self, x):
        p = self.state.params
        return conv3d_forward(x, p['weights'], p['bias'])

    def backward(self, grad, cache):
        grad_input, grad_weights, grad_bias = conv3d_backward(grad, cache, self.state.params['weights'])
        self.state.grads['weights'] += grad_weights
        self.state.grads['bias'] += grad_bias
        return grad_input


class MaxPool3d(Layer):
    name = 'maxpool3d'

    def __init__(self, size=2):
        self.size = size

    def forward(self, x):
        return maxpool3d(x, self.size)

    def backward(self, grad, cache):
        return maxpool3d_backward(grad, cache)


class Upsample3d(Layer):
    name = 'upsample3d'

    def __init__(self, factor=2):
        self.factor = factor

    def forward(self, x):
        return upsample_nearest(x, self.factor), None

    def backward(self, grad, cache):
        return upsample_nearest_backward(grad, self.factor)


class CenterCrop(Layer):
    name = 'center_crop'

    def __init__(self, dims):
        self.dims = tuple(dims)

    def forward(self, x):
        return center_crop(x, self.dims), x.shape

    def backward(self, grad, cache):
        return center_crop_backward(grad, cache)


class Dense(Layer):
    name = 'dense'

    def __init__(self, in_features, out_features, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.state = LayerState({
            'weights': np.zeros((in_features, out_features), dtype=dtype),
            'bias': np.zeros(out_features, dtype=dtype),
        })

    def init(self, rng):
        w = self.state.params['weights']
        w[...] = glorot_uniform(rng, w.shape, self.in_features, self.out_features, w.dtype)
        self.state.params['bias'].fill(0)

    def forward(self, x):
        p = self.state.params
        return dense_forward(x, p['weights'], p['bias']), x

    def backward(self, grad, cache):
        grad_input, grad_weights, grad_bias = dense_backward(grad, cache, self.state.params['weights'])
        self.state.grads['weights'] += grad_weights
        self.state.grads['bias'] += grad_bias
        return grad_input


class ReLU(Layer):
    name = 'relu'

    def forward(self, x):
        return relu_forward(x), x

    def backward(self, grad, cache):
        return relu_backward(grad, cache)


class Flatten(Layer):
    name = 'flatten'

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache)


class Reshape(Layer):
    name = 'reshape'

    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, grad, cache):
        return grad.reshape(cache)


class SoftmaxCrossEntropy(Layer):
    """
    Loss as a layer with a fixed one-hot target; forward yields a 0-d loss
    """
    name = 'softmax_ce'

    def __init__(self, target):
        self.target = target

    def forward(self, x):
        loss, grad = softmax_ce_loss(x, self.target)
        return np.asarray(loss, dtype=x.dtype), grad

    def backward(self, grad, cache):
        return cache * grad


def forward_chain(layers, x):
    caches = []
    for layer in layers:
        x, cache = layer.forward(x)
        caches.append(cache)
    return x, caches


def backward_chain(layers, caches, grad):
    for layer, cache in zip(reversed(layers), reversed(caches)):
        grad = layer.backward(grad, cache)
    return grad


def adam_step(state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    Adam with bias correction, in place on state.params
    """
    state.step += 1
    t = state.step
    for key, param in state.params.items():
        grad = state.grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1 - beta1) * grad
        v *= beta2
        v += (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype)


def grad_check(layer, x, step=1e-3, seed=0):
    """
    Max relative error between analytic and central-difference gradients of
    sum(layer(x) * R) for a fixed random R, over the input and every parameter.
    Relative error of a tensor is |a - n| / (|a| + |n|) in the L2 norm.
    """
    rng = np.random.default_rng(seed)
    out, _ = layer.forward(x)
    weights = rng.standard_normal(out.shape)

    def objective():
        y, _ = layer.forward(x)
        return float((y * weights).sum())

    if layer.state is not None:
        layer.state.zero_grad()
    y, cache = layer.forward(x)
    analytic = {'input': layer.backward(np.asarray(weights, dtype=y.dtype), cache)}
    if layer.state is not None:
        for key, g in layer.state.grads.items():
            analytic[key] = g.copy()

    targets = {'input': x}
    if layer.state is not None:
        targets.update(layer.state.params)

    worst = 0.0
    for key, tensor in targets.items():
        numeric = np.zeros(tensor.shape, dtype=np.float64)
        flat = tensor.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = objective()
            flat[i] = original - step
            minus = objective()
            flat[i] = original
            numeric_flat[i] = (plus - minus) / (2 * step)
        a = np.asarray(analytic[key], dtype=np.float64)
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        if denom == 0:
            continue
        worst = max(worst, float(np.linalg.norm(a - numeric) / denom))
    return worst


# Weight files

def save_weights(states, fileobj):
    """
    Versioned binary weight file: magic, version, JSON manifest length, JSON
    manifest (tensor names, shapes, Adam steps), then every tensor as
    little-endian float32 in manifest order.
    `states` is a list of (layer name, LayerState).
    """
    tensors = []
    layers = []
    for name, state in states:
        layers.append({'name': name, 'step': state.step})
        for key in sorted(state.params):
            for kind, store in (('param', state.params), ('m', state.m), ('v', state.v)):
                tensors.append(('{}/{}/{}'.format(name, kind, key), store[key]))

    manifest = json.dumps({
        'layers': layers,
        'tensors': [{'name': n, 'shape': list(t.shape)} for n, t in tensors],
    }, sort_keys=True).encode('utf-8')

    fileobj.write(WEIGHTS_MAGIC)
    fileobj.write(struct.pack('<II', WEIGHTS_VERSION, len(manifest)))
    fileobj.write(manifest)
    for _, tensor in tensors:
        fileobj.write(np.ascontiguousarray(tensor, dtype='<f4').tobytes())


def weights_to_bytes(states):
    buffer = io.BytesIO()
    save_weights(states, buffer)
    return buffer.getvalue()


def load_weights(states, fileobj):
    """
    Reads a weight file into existing LayerStates, checking names and shapes
    """
    if fileobj.read(4) != WEIGHTS_MAGIC:
        raise TensorShapeError('not a weight file')
    version, length = struct.unpack('<II', fileobj.read(8))
    if version != WEIGHTS_VERSION:
        raise TensorShapeError('unsupported weight file version {}'.format(version))
    manifest = json.loads(fileobj.read(length).decode('utf-8'))

    by_name = dict(states)
    steps = {layer['name']: layer['step'] for layer in manifest['layers']}
    if set(steps) != set(by_name):
        raise TensorShapeError('weight file layers {} do not match model layers {}'.format(
            sorted(steps), sorted(by_name)))

    for entry in manifest['tensors']:
        name, kind, key = entry['name'].split('/')
        store = {'param': by_name[name].params, 'm': by_name[name].m, 'v': by_name[name].v}[kind]
        target = store.get(key)
        shape = tuple(entry['shape'])
        if target is None or target.shape != shape:
            raise TensorShapeError('tensor {} has shape {}, model expects {}'.format(
                entry['name'], shape, None if target is None else target.shape))
        count = int(np.prod(shape))
        data = np.frombuffer(fileobj.read(4 * count), dtype='<f4')
        if data.size != count:
            raise TensorShapeError('weight file truncated at {}'.format(entry['name']))
        target[...] = data.reshape(shape)

    for name, state in states:
        state.step = steps[name]

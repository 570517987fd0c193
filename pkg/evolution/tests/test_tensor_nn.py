from django.test import SimpleTestCase

from .. import tensor_nn as nn

import io
import math
import numpy as np


def conv_oracle(x, weights, bias):
    n, c, sx, sy, sz = x.shape
    o, _, k = weights.shape[0], weights.shape[1], weights.shape[2]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    out = np.zeros((n, o, sx, sy, sz))
    for b in range(n):
        for f in range(o):
            for px in range(sx):
                for py in range(sy):
                    for pz in range(sz):
                        total = bias[f]
                        for ch in range(c):
                            total += np.sum(weights[f, ch] * xp[b, ch, px:px + k, py:py + k, pz:pz + k])
                        out[b, f, px, py, pz] = total
    return out


def maxpool_oracle(x, size=2):
    n, c, sx, sy, sz = x.shape
    dims = [math.ceil(d / size) for d in (sx, sy, sz)]
    out = np.zeros((n, c) + tuple(dims))
    for b in range(n):
        for ch in range(c):
            for i in range(dims[0]):
                for j in range(dims[1]):
                    for l in range(dims[2]):
                        window = x[b, ch, i * size:(i + 1) * size, j * size:(j + 1) * size, l * size:(l + 1) * size]
                        out[b, ch, i, j, l] = window.max()
    return out


class ConvolutionTests(SimpleTestCase):

    # Test an identity kernel
    def test_identity_kernel(self):
        x = np.random.default_rng(0).standard_normal((1, 2, 4, 4, 4))
        weights = np.zeros((2, 2, 3, 3, 3))
        weights[0, 0, 1, 1, 1] = weights[1, 1, 1, 1, 1] = 1.0
        out, _ = nn.conv3d_forward(x, weights, np.zeros(2))
        self.assertTrue(np.allclose(out, x))

    # Test a zero input gives the bias
    def test_zero_input(self):
        weights = np.random.default_rng(1).standard_normal((3, 2, 3, 3, 3))
        bias = np.array([0.5, -1.0, 2.0])
        out, _ = nn.conv3d_forward(np.zeros((1, 2, 3, 3, 3)), weights, bias)
        for f in range(3):
            self.assertTrue(np.all(out[0, f] == bias[f]))

    # Test against a nested-loop convolution
    def test_oracle(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 4, 4))
        weights = rng.standard_normal((3, 2, 3, 3, 3))
        bias = rng.standard_normal(3)
        out, _ = nn.conv3d_forward(x, weights, bias)
        self.assertLess(float(np.max(np.abs(out - conv_oracle(x, weights, bias)))), 1e-10)

    # Test shape checks
    def test_shape_errors(self):
        with self.assertRaises(nn.TensorShapeError):
            nn.conv3d_forward(np.zeros((1, 3, 4, 4, 4)), np.zeros((2, 2, 3, 3, 3)), np.zeros(2))
        with self.assertRaises(nn.TensorShapeError):
            nn.conv3d_forward(np.zeros((1, 2, 4, 4, 4)), np.zeros((2, 2, 2, 2, 2)), np.zeros(2))
        with self.assertRaises(nn.TensorShapeError):
            nn.conv3d_forward(np.zeros((2, 4, 4, 4)), np.zeros((2, 2, 3, 3, 3)), np.zeros(2))

    # Test analytic gradients against finite differences
    def test_gradient(self):
        layer = nn.Conv3d(2, 3, dtype=np.float64)
        layer.init(np.random.default_rng(3))
        layer.state.params['bias'][...] = [0.1, -0.2, 0.3]
        x = np.random.default_rng(4).standard_normal((2, 2, 3, 4, 3))
        self.assertLess(nn.grad_check(layer, x), 1e-4)


class ResamplingTests(SimpleTestCase):

    # Test pooling a constant
    def test_pool_constant(self):
        out, _ = nn.maxpool3d(np.full((1, 1, 4, 4, 4), 2.5))
        self.assertTrue(np.all(out == 2.5))

    # Test ceil-mode output sizes
    def test_pool_sizes(self):
        x = np.zeros((1, 1, 20, 20, 20))
        for expected in (10, 5, 3):
            x, _ = nn.maxpool3d(x)
            self.assertEqual(x.shape[2:], (expected,) * 3)

    # Test against a nested-loop max
    def test_pool_oracle(self):
        x = np.random.default_rng(5).standard_normal((2, 3, 5, 4, 3))
        out, _ = nn.maxpool3d(x)
        self.assertTrue(np.array_equal(out, maxpool_oracle(x)))

    # Test pooling gradients
    def test_pool_gradient(self):
        x = np.random.default_rng(6).standard_normal((1, 2, 5, 5, 3))
        self.assertLess(nn.grad_check(nn.MaxPool3d(2), x, step=1e-6), 1e-4)

    # Test nearest-neighbour upsampling
    def test_upsample(self):
        out = nn.upsample_nearest(np.full((1, 1, 1, 1, 1), 3.0))
        self.assertEqual(out.shape, (1, 1, 2, 2, 2))
        self.assertTrue(np.all(out == 3.0))

        # Pooling undoes upsampling of a constant
        x = np.full((1, 2, 3, 3, 3), -1.5)
        pooled, _ = nn.maxpool3d(nn.upsample_nearest(x))
        self.assertTrue(np.array_equal(pooled, x))

        self.assertLess(nn.grad_check(nn.Upsample3d(2), np.random.default_rng(7).standard_normal((1, 2, 2, 3, 2))),
                        1e-4)

    # Test centre cropping
    def test_center_crop(self):
        x = np.arange(24 ** 3, dtype=np.float64).reshape(1, 1, 24, 24, 24)
        out = nn.center_crop(x, (20, 20, 20))
        self.assertEqual(out.shape, (1, 1, 20, 20, 20))
        self.assertEqual(out[0, 0, 0, 0, 0], x[0, 0, 2, 2, 2])
        self.assertLess(nn.grad_check(nn.CenterCrop((2, 3, 2)), np.random.default_rng(8).standard_normal((1, 1, 4, 4, 4))),
                        1e-4)

        with self.assertRaises(nn.TensorShapeError):
            nn.center_crop(x, (30, 20, 20))


class DenseTests(SimpleTestCase):

    # Test identity weights
    def test_identity(self):
        x = np.random.default_rng(9).standard_normal((4, 3))
        self.assertTrue(np.allclose(nn.dense_forward(x, np.eye(3), np.zeros(3)), x))

    # Test a zero input gives the bias
    def test_zero_input(self):
        bias = np.array([1.0, 2.0])
        out = nn.dense_forward(np.zeros((3, 4)), np.ones((4, 2)), bias)
        self.assertTrue(np.array_equal(out, np.tile(bias, (3, 1))))

    # Test analytic gradients against finite differences
    def test_gradient(self):
        layer = nn.Dense(6, 4, dtype=np.float64)
        layer.init(np.random.default_rng(10))
        x = np.random.default_rng(11).standard_normal((3, 6))
        self.assertLess(nn.grad_check(layer, x), 1e-4)

        with self.assertRaises(nn.TensorShapeError):
            nn.dense_forward(np.zeros((3, 5)), np.zeros((6, 4)), np.zeros(4))


class LossTests(SimpleTestCase):

    def onehot(self, labels):
        return np.moveaxis(np.eye(5)[labels], -1, 1)

    # Test a saturated correct prediction
    def test_saturated(self):
        target = self.onehot(np.array([[[[0, 3], [2, 4]]]]))
        loss, _ = nn.softmax_ce_loss(target * 1e6, target)
        self.assertLess(loss, 1e-9)

    # Test uniform logits
    def test_uniform(self):
        target = self.onehot(np.array([[[[0, 1], [2, 3]]]]))
        loss, _ = nn.softmax_ce_loss(np.zeros(target.shape), target)
        self.assertAlmostEqual(loss, math.log(5), places=12)

    # Test loss gradients against finite differences
    def test_gradient(self):
        rng = np.random.default_rng(12)
        target = self.onehot(rng.integers(0, 5, size=(2, 2, 3, 2)))
        logits = rng.standard_normal(target.shape)
        layer = nn.SoftmaxCrossEntropy(target)
        self.assertLess(nn.grad_check(layer, logits, step=1e-5), 1e-4)

        _, grad = nn.softmax_ce_loss(logits, target)
        numeric = np.zeros(logits.size)
        flat = logits.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + 1e-6
            plus, _ = nn.softmax_ce_loss(logits, target)
            flat[i] = original - 1e-6
            minus, _ = nn.softmax_ce_loss(logits, target)
            flat[i] = original
            numeric[i] = (plus - minus) / 2e-6
        self.assertLess(float(np.max(np.abs(grad.reshape(-1) - numeric))), 1e-5)

    # Test target checks
    def test_bad_target(self):
        with self.assertRaises(nn.LossTargetError):
            nn.softmax_ce_loss(np.zeros((1, 5, 1, 1, 1)), np.full((1, 5, 1, 1, 1), 0.2))
        with self.assertRaises(nn.TensorShapeError):
            nn.softmax_ce_loss(np.zeros((1, 5, 1, 1, 1)), np.zeros((1, 5, 1, 1, 2)))


class GradientSweepTests(SimpleTestCase):
    """
    Every layer type against central differences with step 1e-3 on 20 random tensors
    """

    def sweep(self, build):
        for seed in range(20):
            rng = np.random.default_rng(100 + seed)
            layer, x = build(rng)
            self.assertLess(nn.grad_check(layer, x, step=1e-3, seed=seed), 1e-4, 'seed {}'.format(seed))

    def shape(self, rng, channels):
        return (int(rng.integers(1, 3)), channels) + tuple(int(d) for d in rng.integers(2, 5, size=3))

    # Test convolution gradients
    def test_conv3d(self):
        def build(rng):
            layer = nn.Conv3d(int(rng.integers(1, 4)), int(rng.integers(1, 4)), dtype=np.float64)
            layer.init(rng)
            layer.state.params['bias'][...] = rng.standard_normal(layer.state.params['bias'].shape)
            return layer, rng.standard_normal(self.shape(rng, layer.state.params['weights'].shape[1]))
        self.sweep(build)

    # Test pooling gradients
    def test_maxpool3d(self):
        def build(rng):
            shape = self.shape(rng, int(rng.integers(1, 4)))
            # values 0.01 apart so no window max changes under the step
            x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01
            return nn.MaxPool3d(2), x
        self.sweep(build)

    # Test upsampling gradients
    def test_upsample(self):
        self.sweep(lambda rng: (nn.Upsample3d(2), rng.standard_normal(self.shape(rng, int(rng.integers(1, 4))))))

    # Test dense gradients
    def test_dense(self):
        def build(rng):
            layer = nn.Dense(int(rng.integers(2, 9)), int(rng.integers(2, 7)), dtype=np.float64)
            layer.init(rng)
            x = rng.standard_normal((int(rng.integers(1, 5)), layer.state.params['weights'].shape[0]))
            return layer, x
        self.sweep(build)

    # Test loss gradients
    def test_softmax_ce(self):
        def build(rng):
            shape = self.shape(rng, 5)
            labels = rng.integers(0, 5, size=(shape[0],) + shape[2:])
            target = np.moveaxis(np.eye(5)[labels], -1, 1)
            return nn.SoftmaxCrossEntropy(target), rng.standard_normal(target.shape)
        self.sweep(build)


class AdamTests(SimpleTestCase):

    # Test the first step is about the learning rate against the gradient sign
    def test_first_step(self):
        lr = 1e-3
        for g in (1e-4, 0.5, -3.0, 250.0):
            state = nn.LayerState({'w': np.array([0.0])})
            state.grads['w'][...] = g
            nn.adam_step(state, lr=lr)
            delta = float(state.params['w'][0])
            self.assertAlmostEqual(delta, -lr * math.copysign(1.0, g), delta=lr * 1e-3)
            self.assertLessEqual(abs(delta), lr)

    # Test a zero gradient leaves parameters alone
    def test_zero_gradient(self):
        state = nn.LayerState({'w': np.array([1.5, -2.0])})
        nn.adam_step(state)
        self.assertTrue(np.array_equal(state.params['w'], [1.5, -2.0]))

    # Test three steps on a quadratic against a scalar trace
    def test_quadratic_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        state = nn.LayerState({'w': np.array([1.0])})
        p, m, v = 1.0, 0.0, 0.0
        for t in range(1, 4):
            g = 2 * p
            state.grads['w'][...] = 2 * state.params['w']
            nn.adam_step(state, lr, b1, b2, eps)

            m = m * b1 + (1 - b1) * g
            v = v * b2 + (1 - b2) * g * g
            p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
            self.assertAlmostEqual(float(state.params['w'][0]), p, delta=1e-12)
        self.assertEqual(state.step, 3)


class WeightFileTests(SimpleTestCase):

    def layers(self, seed):
        a, b = nn.Conv3d(2, 3), nn.Dense(4, 2)
        rng = np.random.default_rng(seed)
        a.init(rng)
        b.init(rng)
        return [('conv', a.state), ('dense', b.state)]

    # Test weights survive a save and load
    def test_save_load(self):
        source = self.layers(1)
        source[0][1].step = 7
        source[0][1].m['weights'][...] = 0.25
        target = self.layers(2)
        nn.load_weights(target, io.BytesIO(nn.weights_to_bytes(source)))

        for (_, s), (_, t) in zip(source, target):
            for key in s.params:
                self.assertTrue(np.array_equal(s.params[key], t.params[key]))
                self.assertTrue(np.array_equal(s.m[key], t.m[key]))
        self.assertEqual(target[0][1].step, 7)

        # Same weights, same bytes
        self.assertEqual(nn.weights_to_bytes(source), nn.weights_to_bytes(target))

    # Test mismatched weight files
    def test_mismatch(self):
        data = nn.weights_to_bytes(self.layers(1))
        with self.assertRaises(nn.TensorShapeError):
            nn.load_weights([('conv', nn.Conv3d(2, 4).state), ('dense', nn.Dense(4, 2).state)], io.BytesIO(data))
        with self.assertRaises(nn.TensorShapeError):
            nn.load_weights([('conv', nn.Conv3d(2, 3).state)], io.BytesIO(data))
        with self.assertRaises(nn.TensorShapeError):
            nn.load_weights(self.layers(1), io.BytesIO(b'nope' + data[4:]))
        with self.assertRaises(nn.TensorShapeError):
            nn.load_weights(self.layers(1), io.BytesIO(data[:-8]))

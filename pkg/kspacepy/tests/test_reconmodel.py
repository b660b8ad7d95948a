import os
import tempfile
import unittest

import numpy as np

from ..errors import ConfigError, FormatError, ShapeMismatchError, StaleCacheError
from ..reconmodel import (ArchConfig, ReconParams, init_params, reset, forward, backward,
    magnitude, save_params, load_params)


TINY = ArchConfig(channels=(2, 3), context=1)


def _finite_difference(f, v, h=1e-6):
    numeric = np.zeros_like(v)
    for i in np.ndindex(v.shape):
        old = v[i]
        v[i] = old + h
        up = f()
        v[i] = old - h
        down = f()
        v[i] = old
        numeric[i] = (up - down) / (2*h)
    return numeric


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestReconModel(unittest.TestCase):

    def test_init(self):
        a = init_params(ArchConfig(), 5)
        b = init_params(ArchConfig(), 5)
        np.testing.assert_array_equal(a.theta, b.theta)
        self.assertNotEqual(init_params(ArchConfig(), 6).hash(), a.hash())

        # biases start at zero
        np.testing.assert_array_equal(a.get('enc1.b'), 0.0)
        # fan-in bound of the first layer: 6 input channels * 3 * 3
        self.assertLessEqual(np.abs(a.get('enc0.w')).max(), 1/np.sqrt(54))

    def test_count(self):
        # channels (8, 16, 32), 6 input channels for r=1
        expected = (8*6*9 + 8) + (16*8*9 + 16) + (32*16*9 + 32) \
            + (16*(32+16)*9 + 16) + (8*(16+8)*9 + 8) + (8 + 1)
        self.assertEqual(init_params(ArchConfig(), 0).size, expected)
        self.assertEqual(expected, 14921)

        params = ReconParams(TINY)
        offsets = [offset for _, offset, _ in params.layout]
        self.assertEqual(offsets, sorted(offsets))
        covered = sum(int(np.prod(shape)) for _, _, shape in params.layout)
        self.assertEqual(covered, params.size)
        self.assertEqual(params.grad.shape, params.theta.shape)

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            ArchConfig(channels=())
        with self.assertRaises(ConfigError):
            ArchConfig(context=-1)
        with self.assertRaises(ConfigError):
            ArchConfig(dropout=1.0)
        with self.assertRaises(ShapeMismatchError):
            ReconParams(TINY, np.zeros(3))

    def test_residual(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 2, 8, 8))
        out, _ = forward(ReconParams(ArchConfig()), x)
        self.assertEqual(out.shape, (3, 1, 8, 8))
        np.testing.assert_allclose(out[:, 0], np.abs(x[:, 0] + 1j*x[:, 1]), atol=1e-9)
        np.testing.assert_array_equal(out[:, 0], magnitude(x))

    def test_shapes(self):
        params = init_params(TINY, 1)
        out, _ = forward(params, np.ones((5, 2, 4, 6)))
        self.assertEqual(out.shape, (5, 1, 4, 6))
        with self.assertRaises(ShapeMismatchError):
            forward(params, np.ones((2, 3, 4, 4)))
        with self.assertRaises(ShapeMismatchError):
            forward(params, np.ones((2, 2, 5, 4)))

    def test_deterministic(self):
        params = init_params(TINY, 2)
        x = np.random.default_rng(1).normal(size=(2, 2, 8, 8))
        np.testing.assert_array_equal(forward(params, x)[0], forward(params, x)[0])

    def test_temporal_context(self):
        params = init_params(ArchConfig(channels=(4,), context=1), 3)
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 2, 8, 8))
        base = forward(params, x)[0][2]

        for far in (0, 4):
            probe = x.copy()
            probe[far] = 0.0
            np.testing.assert_array_equal(forward(params, probe)[0][2], base)

        probe = x.copy()
        probe[1] = 0.0
        self.assertFalse(np.allclose(forward(params, probe)[0][2], base))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        params = init_params(TINY, 6)
        # biases away from zero so every block takes part
        params.theta += rng.normal(0, 0.1, params.size)
        x = rng.normal(size=(2, 2, 8, 8))
        upstream = rng.normal(size=(2, 1, 8, 8))

        out, cache = forward(params, x)
        grad, grad_x = backward(params, cache, upstream)
        self.assertEqual(grad_x.shape, x.shape)

        def loss():
            return np.sum(upstream * forward(params, x)[0])

        numeric = _finite_difference(loss, params.theta)
        for name, offset, shape in params.layout:
            size = int(np.prod(shape))
            block = slice(offset, offset+size)
            self.assertLessEqual(_rel(grad[block], numeric[block]), 1e-4, name)

        numeric_x = _finite_difference(loss, x)
        self.assertLessEqual(_rel(grad_x, numeric_x), 1e-4)

    def test_gradients_dropout(self):
        config = ArchConfig(channels=(2, 3), context=1, dropout=0.3)
        rng = np.random.default_rng(7)
        params = init_params(config, 8)
        x = rng.normal(size=(2, 2, 4, 4))
        upstream = rng.normal(size=(2, 1, 4, 4))

        def run():
            return forward(params, x, training=True, rng=np.random.default_rng(99))

        out, cache = run()
        grad, _ = backward(params, cache, upstream)
        numeric = _finite_difference(lambda: np.sum(upstream * run()[0]), params.theta)
        self.assertLessEqual(_rel(grad, numeric), 1e-4)

        # evaluation mode ignores dropout
        np.testing.assert_array_equal(forward(params, x)[0], forward(params, x, rng=np.random.default_rng(1))[0])
        with self.assertRaises(ValueError):
            forward(params, x, training=True)

    def test_zero_upstream(self):
        params = init_params(TINY, 9)
        x = np.random.default_rng(10).normal(size=(2, 2, 8, 8))
        _, cache = forward(params, x)
        grad, grad_x = backward(params, cache, np.zeros((2, 1, 8, 8)))
        np.testing.assert_array_equal(grad, 0.0)
        np.testing.assert_array_equal(grad_x, 0.0)

    def test_stale(self):
        params = init_params(TINY, 11)
        x = np.ones((2, 2, 4, 4))
        _, cache = forward(params, x)
        params.theta[0] += 1.0
        with self.assertRaises(StaleCacheError):
            backward(params, cache, np.ones((2, 1, 4, 4)))

    def test_reset(self):
        params = init_params(TINY, 12)
        params.theta += 1.0
        np.testing.assert_array_equal(reset(params, 12).theta, init_params(TINY, 12).theta)
        self.assertNotEqual(reset(params, 13).hash(), init_params(TINY, 12).hash())

    def test_checkpoint(self):
        params = init_params(TINY, 14)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'recon.rprm')
            save_params(params, path)
            loaded = load_params(path, TINY)
            np.testing.assert_array_equal(loaded.theta, params.theta)
            with self.assertRaises(FormatError):
                load_params(path, ArchConfig(channels=(2, 4)))


if __name__ == '__main__':
    unittest.main()

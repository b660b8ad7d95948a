import os
import tempfile
import time
import unittest

import numpy as np
import pandas as pd

from ..errors import ShapeMismatchError
from ..nufft import (GriddingKernel, NufftOperator, forward_direct, forward_fast, adjoint,
    adjoint_fast, grad_wrt_coords, dump_samples_csv, pixel_grid)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _complex(rng, shape):
    return rng.normal(size=shape) + 1j*rng.normal(size=shape)


class TestNufft(unittest.TestCase):

    def test_delta(self):
        img = np.zeros((8, 8))
        img[4, 4] = 1.0
        coords = np.random.default_rng(0).uniform(-0.5, 0.5, (3, 5, 2))
        np.testing.assert_allclose(forward_direct(img, coords), np.ones((3, 5)), atol=1e-14)
        np.testing.assert_allclose(np.abs(forward_fast(img, coords)), 1.0, atol=1e-5)

    def test_dc(self):
        img = _complex(np.random.default_rng(1), (6, 10))
        X = forward_direct(img, np.zeros((1, 1, 2)))
        np.testing.assert_allclose(X[0, 0], img.sum(), rtol=1e-13)

    def test_dirichlet(self):
        # constant image on 4x4, kx = 0.25: sum_u exp(-2 pi i u/4) * 4 columns
        img = np.ones((4, 4))
        X = forward_direct(img, np.array([[[0.25, 0.0]]]))
        u = np.arange(-2, 2)
        expected = 4*np.sum(np.exp(-2j*np.pi*0.25*u))
        np.testing.assert_allclose(X[0, 0], expected, atol=1e-13)
        # geometric series closed form
        q = np.exp(-2j*np.pi*0.25)
        np.testing.assert_allclose(expected, 4*q**-2*(1 - q**4)/(1 - q), atol=1e-13)

    def test_range(self):
        img = np.ones((4, 4))
        forward_direct(img, np.array([[[0.5, -0.5]]]))
        with self.assertRaises(ValueError):
            forward_direct(img, np.array([[[0.51, 0.0]]]))
        with self.assertRaises(ValueError):
            forward_fast(img, np.array([[[np.nan, 0.0]]]))
        with self.assertRaises(ShapeMismatchError):
            forward_direct(img, np.zeros((2, 3)))

    def test_fast_accuracy(self):
        rng = np.random.default_rng(42)
        kernel = GriddingKernel()
        worst = 0.0
        for _ in range(100):
            img = _complex(rng, (32, 32))
            coords = rng.uniform(-0.5, 0.5, (4, 64, 2))
            op_direct = NufftOperator(coords, img.shape)
            op_fast = NufftOperator(coords, img.shape, kernel)
            worst = max(worst, _rel(op_fast.forward(img), op_direct.forward(img)))
        self.assertLessEqual(worst, 1e-5)

    def test_fast_runtime(self):
        rng = np.random.default_rng(8)
        img = _complex(rng, (64, 64))
        coords = rng.uniform(-0.5, 0.5, (16, 512, 2))
        start = time.perf_counter()
        exact = forward_direct(img, coords)
        direct = time.perf_counter() - start
        fast = np.inf
        for _ in range(3):
            start = time.perf_counter()
            approx = forward_fast(img, coords)
            fast = min(fast, time.perf_counter() - start)
        self.assertLessEqual(fast, 0.2*direct)
        self.assertLessEqual(_rel(approx, exact), 1e-5)

    def test_kernel_width(self):
        rng = np.random.default_rng(5)
        img = _complex(rng, (32, 32))
        coords = rng.uniform(-0.5, 0.5, (4, 64, 2))
        exact = forward_direct(img, coords)
        errors = [_rel(forward_fast(img, coords, GriddingKernel(width=w)), exact) for w in (4, 6, 8)]
        self.assertLess(errors[1], errors[0])
        self.assertLess(errors[2], errors[1])

    def test_kernel_invalid(self):
        with self.assertRaises(ValueError):
            GriddingKernel(width=1)
        with self.assertRaises(ValueError):
            GriddingKernel(oversamp=1.1)
        kernel = GriddingKernel(width=4, oversamp=2.0)
        self.assertEqual(kernel(2.5), 0.0)
        self.assertGreater(kernel(0.0), kernel(1.0))

    def test_adjoint_direct(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            x = _complex(rng, (6, 8))
            coords = rng.uniform(-0.5, 0.5, (2, 7, 2))
            y = _complex(rng, (2, 7))
            op = NufftOperator(coords, x.shape)
            lhs = np.vdot(y, op.forward(x))
            rhs = np.vdot(op.adjoint(y), x)
            worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x)*np.linalg.norm(y)))
        self.assertLessEqual(worst, 1e-12)

    def test_adjoint_fast(self):
        rng = np.random.default_rng(4)
        kernel = GriddingKernel()
        worst = 0.0
        for _ in range(100):
            x = _complex(rng, (16, 12))
            coords = rng.uniform(-0.5, 0.5, (3, 10, 2))
            y = _complex(rng, (3, 10))
            op = NufftOperator(coords, x.shape, kernel)
            lhs = np.vdot(y, op.forward(x))
            rhs = np.vdot(op.adjoint(y), x)
            worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(x)*np.linalg.norm(y)))
        self.assertLessEqual(worst, 1e-5)

        coords = rng.uniform(-0.5, 0.5, (4, 64, 2))
        y = _complex(rng, (4, 64))
        self.assertLessEqual(_rel(adjoint_fast(y, coords, (32, 32)), adjoint(y, coords, (32, 32))), 1e-5)

    def test_adjoint_dc(self):
        img = adjoint(np.ones((1, 1)), np.zeros((1, 1, 2)), (5, 4))
        np.testing.assert_allclose(img, np.ones((5, 4)), atol=1e-15)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        x, z = _complex(rng, (2, 8, 8))
        coords = rng.uniform(-0.5, 0.5, (3, 9, 2))
        op = NufftOperator(coords, (8, 8))
        a, b = 0.3 - 1.2j, 2.5
        np.testing.assert_allclose(op.forward(a*x + b*z), a*op.forward(x) + b*op.forward(z), atol=1e-12)
        # stacked images go through in one call
        np.testing.assert_allclose(op.forward(np.stack([x, z]))[1], op.forward(z), atol=1e-12)

    def test_shift(self):
        rng = np.random.default_rng(8)
        img = np.zeros((16, 16), dtype=complex)
        img[4:12, 4:12] = _complex(rng, (8, 8))
        coords = rng.uniform(-0.5, 0.5, (2, 10, 2))
        a, b = 2, -3
        shifted = np.roll(img, (a, b), axis=(0, 1))
        expected = forward_direct(img, coords) * np.exp(-2j*np.pi*(coords[..., 0]*a + coords[..., 1]*b))
        np.testing.assert_allclose(forward_direct(shifted, coords), expected, atol=1e-10)

    def test_grad_closed_form(self):
        img = np.ones((4, 4))
        origin = np.zeros((1, 1, 2))
        # dX/dkx at the origin is -2 pi i sum(u img) = 16 pi i
        np.testing.assert_allclose(np.sum(pixel_grid(4)[:, None]*img), -8)
        grad = grad_wrt_coords(img, origin, np.ones((1, 1)))
        np.testing.assert_allclose(grad[0, 0], [0.0, 0.0], atol=1e-12)
        grad = grad_wrt_coords(img, origin, 1j*np.ones((1, 1)))
        np.testing.assert_allclose(grad[0, 0], [16*np.pi, 16*np.pi], rtol=1e-12)

    def test_grad_finite_difference(self):
        rng = np.random.default_rng(9)
        img = _complex(rng, (16, 16))
        coords = rng.uniform(-0.4, 0.4, (2, 5, 2))
        upstream = _complex(rng, (2, 5))

        def loss(c):
            # real pairing whose derivative w.r.t. X is `upstream`
            return np.real(np.vdot(upstream, forward_direct(img, c)))

        grad = grad_wrt_coords(img, coords, upstream)
        numeric = np.zeros_like(coords)
        h = 1e-4
        for idx in np.ndindex(coords.shape):
            up, down = coords.copy(), coords.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (loss(up) - loss(down)) / (2*h)
        self.assertLessEqual(_rel(grad, numeric), 1e-4)

        np.testing.assert_array_equal(grad_wrt_coords(img, coords, np.zeros((2, 5))), np.zeros((2, 5, 2)))

    def test_grad_fast(self):
        rng = np.random.default_rng(10)
        img = _complex(rng, (16, 16))
        coords = rng.uniform(-0.5, 0.5, (2, 6, 2))
        upstream = _complex(rng, (2, 6))
        exact = grad_wrt_coords(img, coords, upstream)
        fast = grad_wrt_coords(img, coords, upstream, kernel=GriddingKernel())
        self.assertLessEqual(_rel(fast, exact), 1e-4)

    def test_shapes(self):
        op = NufftOperator(np.zeros((2, 3, 2)), (4, 4))
        with self.assertRaises(ShapeMismatchError):
            op.forward(np.zeros((5, 4)))
        with self.assertRaises(ShapeMismatchError):
            op.adjoint(np.zeros((2, 4)))
        with self.assertRaises(ValueError):
            NufftOperator(np.zeros((2, 3, 2)), (4,))

    def test_dump(self):
        rng = np.random.default_rng(12)
        coords = rng.uniform(-0.5, 0.5, (2, 3, 2))
        samples = forward_direct(_complex(rng, (4, 4)), coords)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'samples.csv')
            dump_samples_csv(samples, coords, path)
            df = pd.read_csv(path)
        self.assertEqual(list(df.columns), ['shot', 'sample', 'kx', 'ky', 're', 'im'])
        self.assertEqual(len(df), 6)
        np.testing.assert_allclose(df['re'] + 1j*df['im'], samples.ravel())


if __name__ == '__main__':
    unittest.main()

import os
import tempfile
import unittest

import numpy as np

from ..errors import FormatError, ShapeMismatchError
from ..trajectory import (TrajectorySet, init_radial, init_golden_angle, init_trajectory,
    clone_frame_trajectory, save_trajectory, load_trajectory, GOLDEN_ANGLE)


class TestTrajectory(unittest.TestCase):

    def test_radial(self):
        traj = init_radial(1, 2, 3)
        expected = [[[-0.5, 0.0], [0.0, 0.0], [0.5, 0.0]],
                    [[0.0, -0.5], [0.0, 0.0], [0.0, 0.5]]]
        np.testing.assert_allclose(traj.coords[0], expected, atol=1e-15)
        self.assertTrue(traj.in_range())

        # every frame identical and spokes pass through the origin
        traj = init_radial(4, 6, 9)
        for t in range(4):
            np.testing.assert_array_equal(traj.frame(t), traj.frame(0))
        np.testing.assert_allclose(traj.coords[:, :, 4], 0.0, atol=1e-15)

    def test_single_sample(self):
        traj = init_radial(1, 3, 1)
        np.testing.assert_array_equal(traj.coords, np.zeros((1, 3, 1, 2)))

    def test_golden(self):
        golden = init_golden_angle(3, 4, 16)
        radial = init_radial(1, 4, 16)
        np.testing.assert_array_equal(golden.frame(0), radial.frame(0))

        # frame 1 is frame 0 rotated by the golden angle
        a = np.deg2rad(GOLDEN_ANGLE)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        np.testing.assert_allclose(golden.frame(0) @ rot.T, golden.frame(1), atol=1e-12)
        self.assertFalse(np.allclose(golden.frame(1), golden.frame(2)))

        np.testing.assert_array_equal(init_golden_angle(1, 5, 8).coords, init_radial(1, 5, 8).coords)

    def test_dispatch(self):
        self.assertEqual(init_trajectory('radial', 2, 3, 4), init_radial(2, 3, 4))
        self.assertEqual(init_trajectory('golden', 2, 3, 4), init_golden_angle(2, 3, 4))
        with self.assertRaises(ValueError):
            init_trajectory('spiral', 2, 3, 4)

    def test_bad_dims(self):
        with self.assertRaises(ValueError):
            init_radial(0, 3, 4)
        with self.assertRaises(ValueError):
            init_radial(1, 3, 4, k_extent=0.7)
        with self.assertRaises(ValueError):
            TrajectorySet(np.zeros((2, 3, 2)))
        with self.assertRaises(ValueError):
            TrajectorySet(np.full((1, 1, 2, 2), np.nan))

    def test_coords_setter(self):
        traj = init_radial(2, 3, 4)
        traj.coords = np.zeros((2, 3, 4, 2))
        with self.assertRaises(ShapeMismatchError):
            traj.coords = np.zeros((2, 3, 5, 2))

    def test_clone(self):
        traj = init_golden_angle(3, 4, 8)
        cloned = clone_frame_trajectory(0, 2, traj)
        np.testing.assert_array_equal(cloned.frame(2), traj.frame(0))
        np.testing.assert_array_equal(cloned.frame(1), traj.frame(1))
        # original untouched
        self.assertFalse(np.array_equal(traj.frame(2), traj.frame(0)))

        same = clone_frame_trajectory(1, 1, traj)
        self.assertEqual(same, traj)

        with self.assertRaises(IndexError):
            clone_frame_trajectory(0, 3, traj)

    def test_broadcast(self):
        traj = init_radial(1, 3, 4)
        wide = traj.broadcast(5)
        self.assertEqual(wide.shape, (5, 3, 4, 2))
        with self.assertRaises(ValueError):
            wide.broadcast(2)

    def test_dataframe(self):
        traj = init_golden_angle(2, 3, 4)
        df = traj.dataframe()
        self.assertEqual(len(df), 2*3*4)
        self.assertEqual(list(df.columns), ['frame', 'shot', 'sample', 'kx', 'ky'])
        self.assertEqual(len(traj.dataframe(frame=1)), 12)
        np.testing.assert_array_equal(traj.dataframe(frame=1)['kx'], traj.frame(1)[..., 0].ravel())

    def test_serialization(self):
        traj = init_golden_angle(3, 4, 5)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'traj.ktrj')
            save_trajectory(traj, path)
            loaded = load_trajectory(path)
            self.assertEqual(loaded, traj)
            self.assertEqual(loaded.hash(), traj.hash())

            with open(path, 'rb') as f:
                raw = f.read()

            # truncated payload
            with open(path, 'wb') as f:
                f.write(raw[:-8])
            with self.assertRaises(ShapeMismatchError):
                load_trajectory(path)

            # wrong magic
            with open(path, 'wb') as f:
                f.write(b'XXXX' + raw[4:])
            with self.assertRaises(FormatError) as ctx:
                load_trajectory(path)
            self.assertEqual(ctx.exception.section, 'magic')

            # truncated header
            with open(path, 'wb') as f:
                f.write(raw[:8])
            with self.assertRaises(FormatError) as ctx:
                load_trajectory(path)
            self.assertEqual(ctx.exception.section, 'header')

    def test_serialization_shapes(self):
        rng = np.random.default_rng(17)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'traj.ktrj')
            for i in range(40):
                # every fourth case is a shared trajectory
                n_frames = 1 if i % 4 == 0 else int(rng.integers(1, 5))
                shape = (n_frames, int(rng.integers(1, 5)), int(rng.integers(1, 17)), 2)
                traj = TrajectorySet(rng.uniform(-0.5, 0.5, shape))
                save_trajectory(traj, path)
                loaded = load_trajectory(path)
                self.assertEqual(loaded.shape, shape)
                self.assertEqual(loaded.coords.tobytes(), traj.coords.tobytes())
                self.assertEqual(loaded.hash(), traj.hash())


if __name__ == '__main__':
    unittest.main()

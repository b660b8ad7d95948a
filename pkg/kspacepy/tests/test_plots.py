import io
import os
import tempfile
import unittest
from contextlib import redirect_stdout, redirect_stderr

import matplotlib
matplotlib.use('Agg')
import pandas as pd

from .. import plots
from ..cli import main
from ..trajectory import init_golden_angle


def _log(n=6):
    return pd.DataFrame({
        'epoch': range(n),
        'stage': ['S1']*2 + ['S2(1)']*2 + ['S3']*(n-4),
        'train_loss': [1.0/(e+1) for e in range(n)],
        'val_psnr': [20.0 + e for e in range(n)],
    })


class TestFigures(unittest.TestCase):

    def test_trajectories(self):
        with tempfile.TemporaryDirectory() as tmp:
            for n_frames in (1, 5):
                path = os.path.join(tmp, 'traj%s.png' % n_frames)
                fig = plots.trajectories(init_golden_angle(n_frames, 3, 8))
                self.assertEqual(len(fig.axes), 1 if n_frames == 1 else 8)
                plots.save(fig, path)
                self.assertGreater(os.path.getsize(path), 0)

    def test_curves(self):
        with tempfile.TemporaryDirectory() as tmp:
            fig = plots.curves(_log())
            # one dotted line per stage change on both panels
            for ax in fig.axes:
                self.assertEqual(sum(line.get_linestyle() == ':' for line in ax.lines), 2)
            path = plots.save(fig, os.path.join(tmp, 'curves.png'))
            self.assertTrue(os.path.exists(path))

    def test_ablation(self):
        rows = [{'regime': r, 'psnr_mean': 30.0 + i, 'psnr_sem': 0.1} for i, r in enumerate(['gar', 'single', 'multi'])]
        with tempfile.TemporaryDirectory() as tmp:
            path = plots.save(plots.ablation(rows), os.path.join(tmp, 'ablation.png'))
            self.assertGreater(os.path.getsize(path), 0)


class TestCommand(unittest.TestCase):

    def test_plot_figures(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = os.path.join(tmp, 'data')
            run_dir = os.path.join(tmp, 'run')
            with redirect_stdout(io.StringIO()), redirect_stderr(io.StringIO()):
                self.assertEqual(main(['generate-data', '--preset', 'tiny', '--out', data], env={}), 0)
                self.assertEqual(main(['train', '--preset', 'tiny', '--data-dir', data, '--run-dir', run_dir], env={}), 0)
                self.assertEqual(main(['plot-data', '--run-dir', run_dir, '--figures'], env={}), 0)
            for name in ('trajectories.png', 'curves.png'):
                self.assertGreater(os.path.getsize(os.path.join(run_dir, 'plots', name)), 0)


if __name__ == '__main__':
    unittest.main()

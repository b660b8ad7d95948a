import glob
import hashlib
import io
import json
import os
import tempfile
import unittest
from contextlib import redirect_stdout, redirect_stderr

import numpy as np

from ..cli import main, build_parser, resolve_config
from ..trajectory import TrajectorySet, save_trajectory


def _call(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(list(argv), env={})
    return code, out.getvalue(), err.getvalue()


def _error(err):
    """ the JSON error line, after any log output """
    return json.loads(err.strip().splitlines()[-1])


def _checksums(directory):
    sums = {}
    for path in sorted(glob.glob(os.path.join(directory, '*'))):
        with open(path, 'rb') as f:
            sums[os.path.basename(path)] = hashlib.md5(f.read()).hexdigest()
    return sums


class TestGenerate(unittest.TestCase):

    def test_generate(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = os.path.join(tmp, 'data')
            code, out, _ = _call('generate-data', '--preset', 'tiny', '--out', data)
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out)['train'], 2)
            self.assertEqual(len(glob.glob(os.path.join(data, '*.dseq'))), 6)
            first = _checksums(data)

            code, _, err = _call('generate-data', '--preset', 'tiny', '--out', data)
            self.assertEqual(code, 3)
            self.assertEqual(_error(err)['error'], 'FileExistsError')

            self.assertEqual(_call('generate-data', '--preset', 'tiny', '--out', data, '--force')[0], 0)
            self.assertEqual(_checksums(data), first)

    def test_bad_fractions(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = os.path.join(tmp, 'data')
            code, _, err = _call('generate-data', '--preset', 'tiny', '--out', data,
                '--set', 'data.fractions=[0.5, 0.3, 0.3]')
            self.assertEqual(code, 2)
            self.assertEqual(_error(err)['error'], 'ConfigError')
            self.assertFalse(os.path.exists(data))

    def test_usage(self):
        self.assertEqual(_call('generate-data', '--no-such-flag')[0], 2)
        self.assertEqual(_call('launch')[0], 2)


class TestFlags(unittest.TestCase):

    def test_modes(self):
        args = build_parser().parse_args(['train', '--preset', 'tiny', '--mode', 'shared', '--resets'])
        config = resolve_config(args, env={})
        self.assertTrue(config.train.shared)
        self.assertFalse(config.train.freeze)
        self.assertTrue(config.train.resets)

        args = build_parser().parse_args(['train', '--preset', 'tiny', '--regime', 'multi+resets+freeze',
            '--threads', '2', '--seed', '4'])
        config = resolve_config(args, env={})
        self.assertEqual((config.train.mode, config.train.freeze, config.train.resets), ('per-frame', True, True))
        self.assertEqual((config.data.workers, config.seed), (2, 4))

    def test_env(self):
        args = build_parser().parse_args(['train', '--preset', 'tiny'])
        config = resolve_config(args, env={'KSPACEPY_TRAIN__BATCH_SIZE': '1'})
        self.assertEqual(config.train.batch_size, 1)


class TestAudit(unittest.TestCase):

    def test_audit(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'zigzag.ktrj')
            coords = np.zeros((1, 1, 6, 2))
            coords[0, 0, ::2, 0] = 0.45
            coords[0, 0, 1::2, 0] = -0.45
            save_trajectory(TrajectorySet(coords), path)
            code, out, _ = _call('audit', '--preset', 'tiny', path)
            self.assertEqual(code, 0)
            report = json.loads(out)
            self.assertFalse(report['feasible'])
            self.assertEqual(report['per_shot_worst'][0][:2], [0, 0])

            code, _, err = _call('audit', '--preset', 'tiny', os.path.join(tmp, 'missing.ktrj'))
            self.assertEqual(code, 3)
            self.assertIn('missing.ktrj', _error(err)['message'])


class TestWorkflow(unittest.TestCase):

    def test_train_evaluate_plot(self):
        with tempfile.TemporaryDirectory() as tmp:
            data = os.path.join(tmp, 'data')
            run_dir = os.path.join(tmp, 'run')
            self.assertEqual(_call('generate-data', '--preset', 'tiny', '--out', data)[0], 0)
            code, out, _ = _call('train', '--preset', 'tiny', '--data-dir', data, '--run-dir', run_dir)
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out)['epochs'], 3)

            code, out, _ = _call('evaluate', '--preset', 'tiny', '--run-dir', run_dir, '--data-dir', data)
            self.assertEqual(code, 0)
            self.assertEqual(json.loads(out)['n'], 2)
            self.assertTrue(os.path.exists(os.path.join(run_dir, 'eval_test.json')))

            code, out, _ = _call('audit', '--preset', 'tiny', os.path.join(run_dir, 'checkpoints', 'final.ktrj'))
            self.assertTrue(json.loads(out)['feasible'])

            self.assertEqual(_call('plot-data', '--preset', 'tiny', '--run-dir', run_dir)[0], 0)
            plots = os.path.join(run_dir, 'plots')
            frames = sorted(glob.glob(os.path.join(plots, 'trajectory_frame*.csv')))
            self.assertEqual(len(frames), 2)
            with open(frames[0]) as f:
                self.assertEqual(len(f.read().strip().splitlines()), 1 + 2*8)
            self.assertTrue(os.path.exists(os.path.join(plots, 'curves.csv')))
            first = _checksums(plots)
            _call('plot-data', '--preset', 'tiny', '--run-dir', run_dir)
            self.assertEqual(_checksums(plots), first)

    def test_missing_run(self):
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(_call('plot-data', '--run-dir', tmp)[0], 3)
            self.assertEqual(_call('evaluate', '--run-dir', tmp)[0], 3)


if __name__ == '__main__':
    unittest.main()

"""
Command line experiment runner.

    python -m kspacepy generate-data --preset desk-small
    python -m kspacepy train --regime multi+resets+freeze --run-dir runs/multi
    python -m kspacepy evaluate --run-dir runs/multi --split test
    python -m kspacepy audit runs/multi/checkpoints/final.ktrj
    python -m kspacepy plot-data --run-dir runs/multi --figures
    python -m kspacepy ablation --run-dir runs/ablation
    python -m kspacepy sweep --shots 4 6 8 --run-dir runs/sweep

Config keys can be set with --set section.key=value or with
KSPACEPY_<SECTION>__<KEY> environment variables.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
import argparse
import glob
import json
import logging
import os
import sys

from .config import load_config, from_dict
from .data import build_dataset, write_dataset, load_split, SUFFIX
from .errors import ConfigError, KspaceError
from .kinematics import audit
from .pipeline import PipelineState
from .reconmodel import load_params
from .trajectory import load_trajectory
from .training import run, evaluate, regime_config, REGIMES


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
SWEEP_REGIMES = ('single+resets', 'multi+resets+freeze')


class _Parser(argparse.ArgumentParser):
    """ reports usage errors as ConfigError so they share the JSON error path """
    def error(self, message):
        raise ConfigError(message)


def _assignment(text):
    if '=' not in text:
        raise argparse.ArgumentTypeError("expected section.key=value, got %r" % text)
    key, value = text.split('=', 1)
    try:
        return key.strip(), json.loads(value)
    except ValueError:
        return key.strip(), value


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument('--config', help="JSON config file")
    common.add_argument('--preset', default='desk-small', help="desk-small | full-scale (alias paper-3.2) | tiny")
    common.add_argument('--set', dest='overrides', action='append', type=_assignment, default=[],
        metavar='KEY=VALUE', help="dotted config override, repeatable")
    common.add_argument('--seed', type=int)
    common.add_argument('--threads', type=int, help="worker threads for data and metrics")
    common.add_argument('--log-level', default=os.environ.get('KSPACEPY_LOG_LEVEL', 'INFO'))

    parser = _Parser(prog='kspacepy', description="Learned per-frame k-space trajectories for dynamic MRI")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('generate-data', parents=[common], help="write a synthetic phantom dataset")
    p.add_argument('--out', help="dataset directory (paths.data_dir)")
    p.add_argument('--force', action='store_true', help="overwrite an existing dataset")

    p = sub.add_parser('train', parents=[common], help="train trajectories and reconstruction")
    p.add_argument('--run-dir')
    p.add_argument('--data-dir')
    p.add_argument('--regime', choices=list(REGIMES))
    p.add_argument('--mode', choices=['shared', 'per-frame'])
    p.add_argument('--resets', action=argparse.BooleanOptionalAction, default=None)
    p.add_argument('--freeze', action=argparse.BooleanOptionalAction, default=None)
    p.add_argument('--sweep-shots', type=int, nargs='+', metavar='N',
        help="train both sweep regimes for each shot count and write sweep.csv")

    p = sub.add_parser('evaluate', parents=[common], help="metrics of a trained run on a split")
    p.add_argument('--run-dir', required=True)
    p.add_argument('--data-dir')
    p.add_argument('--split', default='test', choices=['train', 'test', 'val'])

    p = sub.add_parser('audit', parents=[common], help="check a trajectory file against the kinematic limits")
    p.add_argument('trajectory')

    p = sub.add_parser('plot-data', parents=[common], help="CSV bundles of a run's trajectories and curves")
    p.add_argument('--run-dir', required=True)
    p.add_argument('--figures', action='store_true', help="also render PNG figures")

    p = sub.add_parser('ablation', parents=[common], help="train every regime and write ablation.csv")
    p.add_argument('--run-dir')
    p.add_argument('--data-dir')
    p.add_argument('--regimes', nargs='+', choices=list(REGIMES), default=list(REGIMES))
    p.add_argument('--figures', action='store_true', help="also render ablation.png")

    p = sub.add_parser('sweep', parents=[common], help="shot count sweep, writes sweep.csv")
    p.add_argument('--run-dir')
    p.add_argument('--data-dir')
    p.add_argument('--shots', type=int, nargs='+', default=[4, 6, 8])
    p.add_argument('--regimes', nargs='+', choices=list(REGIMES), default=list(SWEEP_REGIMES))
    return parser


def resolve_config(args, env=None):
    """ the validated ExperimentConfig for parsed arguments, before any side effect """
    overrides = dict(args.overrides)
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.threads is not None:
        overrides['data.workers'] = args.threads
    for flag, key in (('out', 'paths.data_dir'), ('data_dir', 'paths.data_dir'), ('run_dir', 'paths.run_dir')):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    config = load_config(args.config, args.preset, overrides, env)

    train = {}
    if getattr(args, 'mode', None) is not None:
        train['train.mode'] = args.mode
        # shared mode cannot freeze
        if args.mode == 'shared' and args.freeze is None:
            train['train.freeze'] = False
    for flag in ('resets', 'freeze'):
        if getattr(args, flag, None) is not None:
            train['train.' + flag] = getattr(args, flag)
    if getattr(args, 'regime', None) is not None:
        config = regime_config(config, args.regime)
    if train:
        config = config.updated(train)
    return config


"""
Commands

"""

def cmd_generate_data(config, force=False):
    directory = config.paths.data_dir
    existing = glob.glob(os.path.join(directory, '*' + SUFFIX)) + glob.glob(os.path.join(directory, 'splits.json'))
    if existing and not force:
        raise FileExistsError("%s already holds a dataset, pass --force to overwrite" % directory)
    for path in existing:
        os.remove(path)
        if os.path.exists(path + '.json'):
            os.remove(path + '.json')
    data = config.data
    dataset = build_dataset(data.n_samples, data.size, data.n_frames, config.seed, data.workers)
    manifest = write_dataset(dataset, directory, data.fractions, config.seed)
    return {'directory': directory, **{s: len(manifest[s]) for s in ('train', 'test', 'val')}}


def _splits(config):
    return {s: load_split(config.paths.data_dir, s) for s in ('train', 'val')}


def cmd_train(config, data=None):
    data = _splits(config) if data is None else data
    report = run(config, data, run_dir=config.paths.run_dir)
    return {'run_dir': config.paths.run_dir, 'epochs': len(report.rows), 'val': report.to_dict()['val']}


def _summary_row(report):
    row = {}
    for metric, (mean, sem) in report.final.aggregate().items():
        row[metric + '_mean'] = mean
        row[metric + '_sem'] = sem
    return row


def cmd_ablation(config, regimes=tuple(REGIMES), figures=False):
    """ one run per regime, summarized in ablation.csv """
    import pandas as pd
    data = _splits(config)
    rows = []
    for name in regimes:
        variant = regime_config(config, name).updated(
            {'paths.run_dir': os.path.join(config.paths.run_dir, name.replace('+', '-'))})
        logger.info("ablation regime %s", name)
        report = run(variant, data, run_dir=variant.paths.run_dir)
        rows.append({'regime': name, 'mode': variant.train.mode, 'resets': variant.train.resets,
            'freeze': variant.train.freeze, **_summary_row(report)})
    path = os.path.join(config.paths.run_dir, 'ablation.csv')
    pd.DataFrame(rows).to_csv(path, index=False)
    if figures:
        from . import plots
        plots.save(plots.ablation(rows), os.path.join(config.paths.run_dir, 'ablation.png'))
    return {'table': path, 'rows': rows}


def cmd_sweep(config, shots, regimes=SWEEP_REGIMES):
    """ one run per (shot count, regime), summarized in sweep.csv """
    import pandas as pd
    data = _splits(config)
    rows = []
    for n_shots in shots:
        for name in regimes:
            variant = regime_config(config, name).updated({
                'trajectory.n_shots': n_shots,
                'paths.run_dir': os.path.join(config.paths.run_dir, 'shots%02d-%s' % (n_shots, name.replace('+', '-'))),
            })
            logger.info("sweep %s shots, regime %s", n_shots, name)
            report = run(variant, data, run_dir=variant.paths.run_dir)
            rows.append({'shots': n_shots, 'regime': name, **_summary_row(report)})
    os.makedirs(config.paths.run_dir, exist_ok=True)
    path = os.path.join(config.paths.run_dir, 'sweep.csv')
    pd.DataFrame(rows).to_csv(path, index=False)
    return {'table': path, 'rows': rows}


def load_run(run_dir):
    """ (config, state) from a run directory's config echo and final checkpoint """
    with open(os.path.join(run_dir, 'config.json')) as f:
        config = from_dict(json.load(f))
    ckpt = os.path.join(run_dir, 'checkpoints')
    state = PipelineState(
        traj=load_trajectory(os.path.join(ckpt, 'final.ktrj')),
        recon=load_params(os.path.join(ckpt, 'final.rprm'), config.model),
        limits=config.limits,
        kernel=config.kernel.build(),
        shared=config.train.shared,
        noise=config.data.kspace_noise,
    )
    return config, state


def cmd_evaluate(run_dir, split='test', data_dir=None, workers=None):
    config, state = load_run(run_dir)
    sequences = load_split(data_dir or config.paths.data_dir, split)
    report = evaluate(state, sequences, config.train.batch_size, workers or config.data.workers, config.seed)
    result = {'split': split, 'n': len(sequences), 'metrics': report.to_dict()}
    with open(os.path.join(run_dir, 'eval_%s.json' % split), 'w') as f:
        json.dump(result, f, indent=2, sort_keys=True)
    report.dataframe().to_csv(os.path.join(run_dir, 'eval_%s.csv' % split), index=False)
    return result


def cmd_audit(path, limits):
    return audit(load_trajectory(path), limits).to_dict()


def cmd_plot_data(run_dir, figures=False):
    """ per-frame trajectory CSVs and the curves CSV under run_dir/plots """
    import pandas as pd
    traj = load_trajectory(os.path.join(run_dir, 'checkpoints', 'final.ktrj'))
    curves = pd.read_csv(os.path.join(run_dir, 'log.csv'))
    out = os.path.join(run_dir, 'plots')
    os.makedirs(out, exist_ok=True)
    files = []
    for t in range(traj.n_frames):
        path = os.path.join(out, 'trajectory_frame%02d.csv' % t)
        traj.dataframe(frame=t).to_csv(path, index=False)
        files.append(path)
    path = os.path.join(out, 'curves.csv')
    curves.to_csv(path, index=False)
    files.append(path)
    if figures:
        from . import plots
        files.append(plots.save(plots.trajectories(traj), os.path.join(out, 'trajectories.png')))
        files.append(plots.save(plots.curves(curves), os.path.join(out, 'curves.png')))
    return {'files': files}


def dispatch(args, env=None):
    config = resolve_config(args, env)
    if args.command == 'generate-data':
        return cmd_generate_data(config, args.force)
    if args.command == 'train':
        if args.sweep_shots:
            return cmd_sweep(config, args.sweep_shots)
        return cmd_train(config)
    if args.command == 'evaluate':
        return cmd_evaluate(args.run_dir, args.split, args.data_dir, args.threads)
    if args.command == 'audit':
        return cmd_audit(args.trajectory, config.limits)
    if args.command == 'plot-data':
        return cmd_plot_data(args.run_dir, args.figures)
    if args.command == 'ablation':
        return cmd_ablation(config, args.regimes, args.figures)
    if args.command == 'sweep':
        return cmd_sweep(config, args.shots, args.regimes)
    raise ConfigError("unknown command %r" % args.command)


def _fail(error, code):
    print(json.dumps({'error': type(error).__name__, 'message': str(error)}), file=sys.stderr)
    return code


def main(argv=None, env=None):
    """ :returns: the process exit code """
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(),
            format='%(asctime)s %(name)s %(levelname)s %(message)s')
        result = dispatch(args, env)
    except ConfigError as e:
        return _fail(e, EXIT_CONFIG)
    except (KspaceError, OSError, ValueError) as e:
        logger.debug("command failed", exc_info=True)
        return _fail(e, EXIT_RUNTIME)
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK

"""
Joint optimization of the per-frame trajectories and the reconstruction
model: chronological trajectory freezing, reconstruction resets, the
training regimes compared in ablations, and the run directory.
"""
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .data import augment
from .errors import ConfigError, TrainingAbort
from .kinematics import audit, project_feasible
from .metrics import MetricsReport
from .optimizer import AdamState, adam_step, lr_at_epoch, save_state
from .pipeline import PipelineState, forward_loss, backward, stack_frames
from .reconmodel import init_params, reset, save_params
from .trajectory import TrajectorySet, init_trajectory, clone_frame_trajectory, save_trajectory


logger = logging.getLogger(__name__)

LOG_COLUMNS = ('epoch', 'stage', 'active_frame', 'lr_traj', 'lr_recon', 'train_loss',
    'val_psnr', 'val_vif', 'val_fsim', 'feasible')

# named training regimes, as dotted config overrides
REGIMES = {
    'gar': {'trajectory.init': 'golden', 'train.mode': 'per-frame', 'train.learn_trajectory': False,
        'train.freeze': False, 'train.resets': False},
    'single': {'train.mode': 'shared', 'train.freeze': False, 'train.resets': False},
    'single+resets': {'train.mode': 'shared', 'train.freeze': False, 'train.resets': True},
    'multi': {'train.mode': 'per-frame', 'train.freeze': False, 'train.resets': False},
    'multi+freeze': {'train.mode': 'per-frame', 'train.freeze': True, 'train.resets': False},
    'multi+resets': {'train.mode': 'per-frame', 'train.freeze': False, 'train.resets': True},
    'multi+resets+freeze': {'train.mode': 'per-frame', 'train.freeze': True, 'train.resets': True},
}


def regime_config(config, regime):
    """ `config` switched to one of the named REGIMES """
    if regime not in REGIMES:
        raise ConfigError("unknown regime %r, choose from %s" % (regime, list(REGIMES)))
    overrides = dict(REGIMES[regime])
    overrides.setdefault('train.learn_trajectory', True)
    return config.updated(overrides)


"""
Schedule

"""

@dataclass(frozen=True)
class Stage:
    """
    :name: S1 | S2 | S3 with freezing, joint without
    :active_frame: the only trainable trajectory frame, None when all train
    :start: first global epoch of the stage
    :epochs: number of epochs
    """
    name: str
    active_frame: int
    start: int
    epochs: int

    @property
    def stop(self):
        return self.start + self.epochs

    def label(self):
        return self.name if self.active_frame is None or self.name == 'S1' else '%s(%s)' % (self.name, self.active_frame)

    def trainable(self, n_frames):
        """ boolean [n_frames] of the trajectory frames updated in this stage """
        mask = np.zeros(n_frames, dtype=bool)
        if self.active_frame is None:
            mask[:] = True
        else:
            mask[self.active_frame] = True
        return mask


@dataclass
class FreezeSchedule:
    """
    Stages in execution order and the epochs at which the reconstruction
    model is reinitialized (a reset fires before the epoch runs).
    """
    stages: list
    reset_epochs: list = field(default_factory=list)
    freeze: bool = True

    @property
    def total_epochs(self):
        return sum(s.epochs for s in self.stages)

    def stage_at(self, epoch):
        for i, s in enumerate(self.stages):
            if s.start <= epoch < s.stop:
                return i, s
        raise IndexError("epoch %s is outside the %s epoch schedule" % (epoch, self.total_epochs))

    def __len__(self):
        return len(self.stages)

    def __iter__(self):
        return iter(self.stages)

    def to_dict(self):
        return {
            'stages': [{'name': s.label(), 'active_frame': s.active_frame, 'start': s.start,
                'epochs': s.epochs} for s in self.stages],
            'reset_epochs': list(self.reset_epochs),
            'freeze': self.freeze,
        }


def build_schedule(train, n_frames):
    """
    Stage sequence of a run.

    With freezing: S1 trains frame 0, S2(i) trains frame i for i = 1..n_frames-1
    (initialized from frame i-1), S3 trains every frame, all the same length.
    Resets fire after S1 and after every S2 stage.
    Without freezing: a single joint stage, resets every `reset_period` epochs.

    :train: TrainConfig
    """
    if n_frames < 1:
        raise ConfigError("need at least one frame, got %s" % n_frames)
    if not train.freeze:
        resets = list(range(train.reset_period, train.total_epochs, train.reset_period)) if train.resets else []
        return FreezeSchedule([Stage('joint', None, 0, train.total_epochs)], resets, freeze=False)

    if train.shared:
        raise ConfigError("freezing needs per-frame trajectories")
    n_stages = n_frames + 1
    per_stage = train.epochs_per_stage or train.total_epochs // n_stages
    if per_stage < 1 or per_stage*n_stages != train.total_epochs:
        raise ConfigError("%s total epochs cannot be split into %s stages of %s epochs"
            % (train.total_epochs, n_stages, per_stage))
    stages = [Stage('S1', 0, 0, per_stage)]
    stages += [Stage('S2', i, i*per_stage, per_stage) for i in range(1, n_frames)]
    stages.append(Stage('S3', None, n_frames*per_stage, per_stage))
    resets = [s.start for s in stages[1:]] if train.resets else []
    return FreezeSchedule(stages, resets, freeze=True)


"""
Running

"""

def init_state(config):
    """ PipelineState at its initial trajectory and seeded reconstruction parameters """
    n_frames = 1 if config.train.shared else config.data.n_frames
    traj = init_trajectory(config.trajectory.init, n_frames, config.trajectory.n_shots,
        config.trajectory.m, config.trajectory.k_extent)
    return PipelineState(
        traj=project_feasible(traj, config.limits),
        recon=init_params(config.model, config.seed),
        limits=config.limits,
        kernel=config.kernel.build(),
        shared=config.train.shared,
        strict=config.train.strict,
        noise=config.data.kspace_noise,
    )


def evaluate(state, sequences, batch_size=8, workers=1, seed=0):
    """
    PSNR, VIF and FSIM of the reconstructed magnitudes of `sequences`
    against their true magnitudes. Constructs no optimizer.

    :seed: generator seed for k-space noise, when the state adds any
    """
    if len(sequences) == 0:
        raise ValueError("cannot evaluate an empty split")
    rng = np.random.default_rng(seed)
    refs, outputs = [], []
    for i in range(0, len(sequences), batch_size):
        batch = sequences[i:i+batch_size]
        _, caches = forward_loss(state, batch, training=False, rng=rng)
        refs.extend(np.abs(caches['frames']))
        outputs.extend(caches['outputs'])
    return MetricsReport.from_sequences(refs, outputs, workers=workers)


@dataclass
class TrainReport:
    """
    :rows: one dict per epoch with LOG_COLUMNS
    :schedule: the FreezeSchedule that ran
    :resets: (epoch, seed) of every reconstruction reset
    :final: MetricsReport on the validation split after the last epoch
    """
    rows: list
    schedule: object
    resets: list
    final: object = None
    config_hash: str = None

    @property
    def final_psnr(self):
        return self.final.aggregate()['psnr'][0] if self.final is not None else float('nan')

    def dataframe(self):
        import pandas as pd
        return pd.DataFrame(self.rows, columns=list(LOG_COLUMNS))

    def to_dict(self):
        return {
            'config_hash': self.config_hash,
            'epochs': len(self.rows),
            'schedule': self.schedule.to_dict(),
            'resets': [list(r) for r in self.resets],
            'val': self.final.to_dict() if self.final is not None else None,
        }


class RunDirectory:
    """
    Files of one training run: config.json, log.csv, checkpoints/, report.json
    """
    def __init__(self, path):
        self.path = path
        self.checkpoints = os.path.join(path, 'checkpoints')
        os.makedirs(self.checkpoints, exist_ok=True)

    def write_config(self, config):
        config.save(os.path.join(self.path, 'config.json'))

    def write_log(self, report):
        report.dataframe().to_csv(os.path.join(self.path, 'log.csv'), index=False)

    def write_checkpoint(self, tag, state, optimizers):
        prefix = os.path.join(self.checkpoints, tag)
        save_trajectory(state.traj, prefix + '.ktrj')
        save_params(state.recon, prefix + '.rprm')
        for name, opt in optimizers.items():
            if opt is not None:
                save_state(opt, '%s_%s.optm' % (prefix, name))
        logger.debug("checkpoint %s written", tag)

    def write_report(self, report):
        with open(os.path.join(self.path, 'report.json'), 'w') as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)


def _check_finite(value, epoch, stage, what):
    if not np.all(np.isfinite(value)):
        raise TrainingAbort("non-finite %s at epoch %s in stage %s" % (what, epoch, stage.label()),
            epoch=epoch, stage=stage.label())


def run(config, data, state=None, run_dir=None, callback=None):
    """
    Train trajectories and reconstruction model.

    :config: ExperimentConfig
    :data: mapping with 'train' and 'val' lists of FrameSequence
    :state: PipelineState to continue from, init_state(config) by default
    :run_dir: directory receiving config, log, checkpoints and report
    :callback: called as callback(event, epoch, state, optimizers) with event
        'stage' after a stage starts, 'reset' after a reset and 'epoch' after an epoch
    :returns: TrainReport
    """
    train_set = list(data['train'])
    val_set = list(data.get('val', []))
    if not train_set:
        raise ValueError("training split is empty")
    n_frames = stack_frames(train_set[:1]).shape[1]
    if n_frames != config.data.n_frames:
        raise ConfigError("sequences have %s frames, config says %s" % (n_frames, config.data.n_frames))

    schedule = build_schedule(config.train, n_frames)
    state = init_state(config) if state is None else state
    learn_traj = config.train.learn_trajectory
    optim = config.optim
    pixel_scale = 1.0 / config.n_pixels
    rng = np.random.default_rng(config.seed)

    out = RunDirectory(run_dir) if run_dir is not None else None
    if out is not None:
        out.write_config(config)

    recon_opt = AdamState(state.recon.theta.shape, optim.beta1, optim.beta2, optim.eps)
    traj_opt = None
    report = TrainReport([], schedule, [], config_hash=config.config_hash())
    logger.info("training %s epochs in %s stages, trajectory %s (pixel units), reconstruction %s",
        schedule.total_epochs, len(schedule), optim.trajectory.describe(), optim.recon.describe())

    last_reset = 0
    n_resets = 0
    for epoch in range(schedule.total_epochs):
        index, stage = schedule.stage_at(epoch)

        if epoch == stage.start:
            if out is not None and index > 0:
                out.write_checkpoint('stage%02d' % (index - 1), state, {'traj': traj_opt, 'recon': recon_opt})
            if stage.name == 'S2':
                state.traj = clone_frame_trajectory(stage.active_frame - 1, stage.active_frame, state.traj)
            if learn_traj:
                traj_opt = AdamState(state.traj.shape, optim.beta1, optim.beta2, optim.eps)
            logger.info("stage %s starts at epoch %s", stage.label(), epoch)
            if callback is not None:
                callback('stage', epoch, state, {'traj': traj_opt, 'recon': recon_opt})

        if epoch in schedule.reset_epochs:
            n_resets += 1
            seed = config.seed + n_resets
            state.recon = reset(state.recon, seed)
            recon_opt = AdamState(state.recon.theta.shape, optim.beta1, optim.beta2, optim.eps)
            last_reset = epoch
            report.resets.append((epoch, seed))
            logger.info("reset reconstruction model at epoch %s with seed %s", epoch, seed)
            if callback is not None:
                callback('reset', epoch, state, {'traj': traj_opt, 'recon': recon_opt})

        traj_epoch = epoch - stage.start if schedule.freeze else epoch
        lr_traj = lr_at_epoch(optim.trajectory, traj_epoch) if learn_traj else 0.0
        lr_recon = lr_at_epoch(optim.recon, epoch - last_reset)
        frames_mask = stage.trainable(state.traj.n_frames)
        mask = np.broadcast_to(frames_mask[:, None, None, None], state.traj.shape)

        order = rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), config.train.batch_size):
            batch = [train_set[j] for j in order[i:i+config.train.batch_size]]
            if config.train.augment and config.data.augment_p > 0:
                batch = [augment(seq, rng, config.data.augment_p) for seq in batch]
            loss, caches = forward_loss(state, batch, training=True, rng=rng)
            _check_finite(loss, epoch, stage, 'loss')
            grad_traj, grad_recon = backward(state, caches)
            _check_finite(grad_recon, epoch, stage, 'reconstruction gradient')
            losses.append(loss)

            state.recon.theta[:] = adam_step(state.recon.theta, grad_recon, recon_opt, lr_recon,
                clip_norm=optim.clip_norm)
            if learn_traj:
                _check_finite(grad_traj, epoch, stage, 'trajectory gradient')
                state.traj.coords = adam_step(state.traj.coords, grad_traj, traj_opt, lr_traj*pixel_scale,
                    mask=mask, clip_norm=optim.clip_norm)
                _project_active(state, frames_mask)

        row = {
            'epoch': epoch,
            'stage': stage.label(),
            'active_frame': -1 if stage.active_frame is None else stage.active_frame,
            'lr_traj': lr_traj,
            'lr_recon': lr_recon,
            'train_loss': float(np.mean(losses)),
            'val_psnr': np.nan,
            'val_vif': np.nan,
            'val_fsim': np.nan,
            'feasible': audit(state.traj, state.limits).feasible,
        }
        if val_set:
            agg = evaluate(state, val_set, config.train.batch_size, config.data.workers, config.seed).aggregate()
            row.update(val_psnr=agg['psnr'][0], val_vif=agg['vif'][0], val_fsim=agg['fsim'][0])
        report.rows.append(row)
        logger.info("epoch %s %s frame %s lr %.4g/%.4g loss %.6g val psnr %.3f feasible %s",
            epoch, row['stage'], row['active_frame'], lr_traj, lr_recon, row['train_loss'],
            row['val_psnr'], row['feasible'])
        if out is not None:
            out.write_log(report)
        if callback is not None:
            callback('epoch', epoch, state, {'traj': traj_opt, 'recon': recon_opt})

    if val_set:
        report.final = evaluate(state, val_set, config.train.batch_size, config.data.workers, config.seed)
    if out is not None:
        out.write_checkpoint('stage%02d' % (len(schedule) - 1), state, {'traj': traj_opt, 'recon': recon_opt})
        out.write_checkpoint('final', state, {'traj': traj_opt, 'recon': recon_opt})
        out.write_report(report)
    return report


def _project_active(state, frames_mask):
    """ projects the trainable frames back onto the kinematic limits, frozen frames stay bitwise """
    active = state.traj.coords[frames_mask]
    projected = project_feasible(TrajectorySet(active), state.limits)
    coords = state.traj.coords.copy()
    coords[frames_mask] = projected.coords
    state.traj.coords = coords

"""
Experiment configuration: a frozen tree of sections, named presets,
JSON files, KSPACEPY_<SECTION>__<KEY> environment overrides and dotted
command line overrides, resolved in that order.
"""
import hashlib
import json
import logging
import os
from dataclasses import dataclass, fields, asdict

from .data import DEFAULT_FRACTIONS, AUGMENT_P, split_sizes
from .errors import ConfigError, ShapeMismatchError
from .kinematics import KinematicLimits
from .nufft import GriddingKernel
from .optimizer import LrSchedule, TRAJECTORY_SCHEDULE, RECON_SCHEDULE
from .reconmodel import ArchConfig
from .trajectory import KINDS


logger = logging.getLogger(__name__)

ENV_PREFIX = 'KSPACEPY_'
MODES = ('per-frame', 'shared')
PATHS = ('direct', 'fast')


@dataclass(frozen=True)
class DataConfig:
    """
    :size: (H, W) of every frame
    :n_frames: frames per sequence
    :n_samples: sequences generated by generate-data
    :fractions: train, test, validation shares
    :augment_p: probability of each augmentation on a training draw
    :kspace_noise: std of complex Gaussian noise added to the samples
    :workers: threads used for generation and evaluation
    """
    size: tuple = (64, 64)
    n_frames: int = 8
    n_samples: int = 200
    fractions: tuple = DEFAULT_FRACTIONS
    augment_p: float = AUGMENT_P
    kspace_noise: float = 0.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'size', tuple(int(s) for s in self.size))
        object.__setattr__(self, 'fractions', tuple(float(f) for f in self.fractions))
        if len(self.size) != 2 or min(self.size) < 2:
            raise ConfigError("size must be two dimensions >= 2, got %s" % (self.size,))
        if self.n_frames < 1 or self.n_samples < 1:
            raise ConfigError("n_frames and n_samples must be positive")
        if not 0 <= self.augment_p <= 1:
            raise ConfigError("augment_p must be a probability, got %s" % self.augment_p)
        if self.kspace_noise < 0:
            raise ConfigError("kspace_noise must be >= 0, got %s" % self.kspace_noise)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1, got %s" % self.workers)


@dataclass(frozen=True)
class TrajectoryConfig:
    init: str = 'radial'
    n_shots: int = 6
    m: int = 64
    k_extent: float = 0.5

    def __post_init__(self):
        if self.init not in KINDS:
            raise ConfigError("trajectory init must be one of %s, got %r" % (KINDS, self.init))
        if self.n_shots < 1 or self.m < 2:
            raise ConfigError("need n_shots >= 1 and m >= 2, got %s, %s" % (self.n_shots, self.m))
        if not 0 < self.k_extent <= 0.5:
            raise ConfigError("k_extent must be in (0, 0.5], got %s" % self.k_extent)


@dataclass(frozen=True)
class KernelConfig:
    """
    :path: 'direct' evaluates the exact sums, 'fast' grids with a Kaiser-Bessel kernel
    """
    path: str = 'fast'
    width: int = 8
    oversamp: float = 2.0

    def __post_init__(self):
        if self.path not in PATHS:
            raise ConfigError("kernel path must be one of %s, got %r" % (PATHS, self.path))
        try:
            GriddingKernel(self.width, self.oversamp)
        except ValueError as e:
            raise ConfigError(str(e))

    def build(self):
        """ the GriddingKernel of the fast path, None on the direct path """
        if self.path == 'direct':
            return None
        return GriddingKernel(self.width, self.oversamp)


@dataclass(frozen=True)
class OptimConfig:
    trajectory: LrSchedule = TRAJECTORY_SCHEDULE
    recon: LrSchedule = RECON_SCHEDULE
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = None

    def __post_init__(self):
        for name in ('trajectory', 'recon'):
            value = getattr(self, name)
            if isinstance(value, dict):
                object.__setattr__(self, name, LrSchedule(**value))
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("invalid Adam constants %s, %s, %s" % (self.beta1, self.beta2, self.eps))
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive, got %s" % self.clip_norm)


@dataclass(frozen=True)
class TrainConfig:
    """
    :mode: 'per-frame' learns one trajectory per frame, 'shared' one for all
    :freeze: chronological trajectory freezing stages
    :resets: reinitialize the reconstruction model periodically
    :total_epochs: epoch budget of the run
    :epochs_per_stage: freezing stage length, derived from the budget when None
    :reset_period: epochs between resets without freezing
    :learn_trajectory: _True_ False keeps the initial trajectory fixed
    :strict: refuse infeasible trajectories in the forward pass
    """
    mode: str = 'per-frame'
    freeze: bool = True
    resets: bool = True
    total_epochs: int = 63
    epochs_per_stage: int = None
    reset_period: int = 7
    batch_size: int = 8
    learn_trajectory: bool = True
    augment: bool = True
    strict: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError("mode must be one of %s, got %r" % (MODES, self.mode))
        if self.total_epochs < 1 or self.batch_size < 1 or self.reset_period < 1:
            raise ConfigError("total_epochs, batch_size and reset_period must be positive")
        if self.epochs_per_stage is not None and self.epochs_per_stage < 1:
            raise ConfigError("epochs_per_stage must be positive, got %s" % self.epochs_per_stage)
        if self.mode == 'shared' and self.freeze:
            raise ConfigError("freezing needs per-frame trajectories, shared mode has a single block")

    @property
    def shared(self):
        return self.mode == 'shared'


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = 'data'
    run_dir: str = 'runs/default'


SECTIONS = {
    'data': DataConfig,
    'trajectory': TrajectoryConfig,
    'limits': KinematicLimits,
    'kernel': KernelConfig,
    'model': ArchConfig,
    'optim': OptimConfig,
    'train': TrainConfig,
    'paths': PathsConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Every knob of an experiment. The defaults are the desk-small preset.
    """
    data: DataConfig = DataConfig()
    trajectory: TrajectoryConfig = TrajectoryConfig()
    limits: KinematicLimits = KinematicLimits(n_pixels=64)
    kernel: KernelConfig = KernelConfig()
    model: ArchConfig = ArchConfig()
    optim: OptimConfig = OptimConfig()
    train: TrainConfig = TrainConfig()
    paths: PathsConfig = PathsConfig()
    seed: int = 0

    @property
    def image_shape(self):
        return self.data.size

    @property
    def n_pixels(self):
        return max(self.data.size)

    @property
    def n_stages(self):
        return self.data.n_frames + 1

    def stage_epochs(self):
        """ freezing stage length, total_epochs split evenly over n_frames+1 stages """
        if self.train.epochs_per_stage is not None:
            return self.train.epochs_per_stage
        return self.train.total_epochs // self.n_stages

    def validate(self):
        """ cross-section invariants, raises ConfigError """
        try:
            self.model.check_image(*self.data.size)
        except ShapeMismatchError as e:
            raise ConfigError(str(e))
        split_sizes(self.data.n_samples, self.data.fractions)
        if self.limits.n_pixels != self.n_pixels:
            raise ConfigError("limits.n_pixels %s does not match the %sx%s matrix"
                % (self.limits.n_pixels, *self.data.size))
        if self.train.freeze and self.stage_epochs()*self.n_stages != self.train.total_epochs:
            raise ConfigError("freezing with %s frames runs %s stages, %s total epochs is not %s x %s"
                % (self.data.n_frames, self.n_stages, self.train.total_epochs, self.n_stages, self.stage_epochs()))
        if self.train.freeze and not self.train.learn_trajectory:
            raise ConfigError("freezing needs a learned trajectory")
        return self

    def to_dict(self):
        d = asdict(self)
        d['data']['size'] = list(self.data.size)
        d['data']['fractions'] = list(self.data.fractions)
        d['model']['channels'] = list(self.model.channels)
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.md5(canonical.encode()).hexdigest()

    def updated(self, overrides):
        """ a validated copy with dotted (or nested) overrides applied """
        d = self.to_dict()
        update = _normalize(overrides)
        if 'size' in update.get('data', {}) and 'n_pixels' not in update.get('limits', {}):
            d['limits']['n_pixels'] = None
        _apply(d, update, 'override')
        return from_dict(d)

    def save(self, path):
        with open(path, 'w') as f:
            f.write(self.to_json(indent=2, sort_keys=True))


"""
Presets

"""

PRESETS = {
    'desk-small': {},
    'full-scale': {
        'data': {'size': [384, 144], 'n_frames': 8, 'n_samples': 4170},
        'trajectory': {'n_shots': 16, 'm': 512},
        'train': {'total_epochs': 315, 'epochs_per_stage': 35, 'reset_period': 35, 'batch_size': 12},
        'model': {'dropout': 0.1},
    },
    'tiny': {
        'data': {'size': [8, 8], 'n_frames': 2, 'n_samples': 6, 'fractions': [0.5, 0.25, 0.25]},
        'trajectory': {'n_shots': 2, 'm': 8, 'k_extent': 0.4},
        'kernel': {'path': 'direct'},
        'model': {'channels': [2, 3], 'context': 1},
        'train': {'total_epochs': 3, 'reset_period': 1, 'batch_size': 2},
    },
}
PRESET_ALIASES = {'paper-3.2': 'full-scale'}


def _normalize(overrides):
    """ dotted keys {'train.mode': 'shared'} into nested dicts """
    nested = {}
    for key, value in (overrides or {}).items():
        parts = key.split('.')
        node = nested
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return nested


def _apply(base, update, source, where=''):
    for key, value in update.items():
        name = where + key
        if key not in base:
            raise ConfigError("unknown config key %r (from %s)" % (name, source))
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError("config key %r is a section, got %r (from %s)" % (name, value, source))
            _apply(base[key], value, source, name + '.')
        else:
            base[key] = value


def _parse(value):
    try:
        return json.loads(value)
    except ValueError:
        return value


def env_overrides(env):
    """ KSPACEPY_TRAIN__TOTAL_EPOCHS=10 -> {'train.total_epochs': 10} """
    out = {}
    for key in sorted(env):
        if not key.startswith(ENV_PREFIX):
            continue
        rest = key[len(ENV_PREFIX):]
        if rest == 'SEED':
            out['seed'] = _parse(env[key])
        elif '__' in rest:
            out['.'.join(p.lower() for p in rest.split('__'))] = _parse(env[key])
    return out


def from_dict(d):
    """ build and validate an ExperimentConfig from its resolved dict """
    unknown = set(d) - set(SECTIONS) - {'seed'}
    if unknown:
        raise ConfigError("unknown config sections %s" % sorted(unknown))
    sections = {}
    for name, cls in SECTIONS.items():
        values = dict(d.get(name, {}))
        allowed = {f.name for f in fields(cls)}
        extra = set(values) - allowed
        if extra:
            raise ConfigError("unknown keys %s in section %r" % (sorted(extra), name))
        if name == 'limits' and values.get('n_pixels') is None:
            size = d.get('data', {}).get('size', DataConfig.size)
            values['n_pixels'] = max(int(s) for s in size)
        try:
            sections[name] = cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError("section %r: %s" % (name, e))
    seed = d.get('seed', 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer, got %r" % (seed,))
    return ExperimentConfig(seed=seed, **sections).validate()


def load_config(path=None, preset='desk-small', overrides=None, env=None):
    """
    Resolve a configuration.

    :path: optional JSON file, applied over the preset
    :preset: _desk-small_ full-scale | tiny
    :overrides: dotted keys from the command line, applied last
    :env: environment mapping, os.environ by default
    """
    preset = PRESET_ALIASES.get(preset, preset)
    if preset not in PRESETS:
        raise ConfigError("unknown preset %r, choose from %s" % (preset, sorted(PRESETS) + sorted(PRESET_ALIASES)))
    d = ExperimentConfig().to_dict()
    # n_pixels follows the matrix size unless set explicitly
    d['limits']['n_pixels'] = None
    _apply(d, PRESETS[preset], "preset %s" % preset)
    if path is not None:
        try:
            with open(path) as f:
                _apply(d, json.load(f), path)
        except OSError as e:
            raise ConfigError("cannot read config file %s: %s" % (path, e))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError("config file %s is not valid JSON: %s" % (path, e))
    _apply(d, _normalize(env_overrides(os.environ if env is None else env)), 'environment')
    _apply(d, _normalize(overrides), 'command line')
    config = from_dict(d)
    logger.debug("resolved config %s", config.config_hash())
    return config

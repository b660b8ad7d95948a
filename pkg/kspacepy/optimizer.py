"""
Adam with step-decayed learning rates, one independent state per
parameter group (trajectory, reconstruction).
"""
import hashlib
import logging
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .containers import pack_header, Reader, read_file
from .errors import ConfigError, ShapeMismatchError


logger = logging.getLogger(__name__)

MAGIC = b'OPTM'
SCHEDULE_KINDS = ('multiplicative', 'subtractive')


class AdamState:
    """
    First and second moments of one parameter group.

    :shape: shape of the parameters this state belongs to
    :beta1: _0.9_ first moment decay
    :beta2: _0.999_ second moment decay
    :eps: _1e-8_ denominator floor
    """
    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError("Adam betas must be in [0, 1), got %s, %s" % (beta1, beta2))
        if eps <= 0:
            raise ConfigError("Adam eps must be positive, got %s" % eps)
        self.shape = tuple(shape)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(self.shape)
        self.v = np.zeros(self.shape)
        self.step = 0

    def hash(self):
        h = hashlib.md5(self.m.tobytes())
        h.update(self.v.tobytes())
        h.update(struct.pack('<Q', self.step))
        return h.hexdigest()

    def __repr__(self):
        return "AdamState(shape=%s, step=%s)" % (self.shape, self.step)


def adam_step(params, grads, state, lr, mask=None, clip_norm=None):
    """
    One bias-corrected Adam update.

    :params: current parameter array, not modified
    :grads: gradient of the same shape
    :state: AdamState for this group, updated in place
    :lr: learning rate
    :mask: optional boolean array broadcastable to params, False rows keep their
        parameters and moments bitwise unchanged
    :clip_norm: optional bound on the gradient L2 norm over the unmasked rows
    :returns: updated parameters
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != state.shape or grads.shape != state.shape:
        raise ShapeMismatchError("params %s, grads %s and optimizer state %s disagree"
            % (params.shape, grads.shape, state.shape))
    if lr <= 0:
        raise ValueError("learning rate must be positive, got %s" % lr)
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), params.shape)
        grads = np.where(mask, grads, 0.0)

    if clip_norm is not None:
        norm = np.linalg.norm(grads)
        if norm > clip_norm:
            grads = grads * (clip_norm / norm)

    state.step += 1
    m = state.beta1*state.m + (1 - state.beta1)*grads
    v = state.beta2*state.v + (1 - state.beta2)*grads**2
    m_hat = m / (1 - state.beta1**state.step)
    v_hat = v / (1 - state.beta2**state.step)
    updated = params - lr*m_hat/(np.sqrt(v_hat) + state.eps)

    if mask is None:
        state.m, state.v = m, v
        return updated
    state.m = np.where(mask, m, state.m)
    state.v = np.where(mask, v, state.v)
    return np.where(mask, updated, params)


def reset_state(state):
    """ zeroes moments and step counter in place """
    state.m = np.zeros(state.shape)
    state.v = np.zeros(state.shape)
    state.step = 0
    return state


@dataclass(frozen=True)
class LrSchedule:
    """
    Step decayed learning rate.

    :base_lr: rate for epochs [0, period)
    :factor: multiplier applied every `period` epochs (multiplicative)
    :decrement: amount removed every `period` epochs (subtractive)
    :period: epochs between decays
    :kind: multiplicative | subtractive
    :horizon: last epoch a subtractive schedule must stay positive for
    """
    base_lr: float
    factor: float = 1.0
    period: int = 1
    kind: str = 'multiplicative'
    decrement: float = 0.0
    horizon: int = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError("schedule kind must be one of %s, got %r" % (SCHEDULE_KINDS, self.kind))
        if not self.base_lr > 0:
            raise ConfigError("base learning rate must be positive, got %s" % self.base_lr)
        if int(self.period) != self.period or self.period < 1:
            raise ConfigError("decay period must be a positive integer, got %s" % self.period)
        if self.kind == 'multiplicative' and not self.factor > 0:
            raise ConfigError("decay factor must be positive, got %s" % self.factor)
        if self.kind == 'subtractive':
            if self.decrement < 0:
                raise ConfigError("decrement must be non-negative, got %s" % self.decrement)
            if self.decrement > 0:
                if self.horizon is None:
                    raise ConfigError("a subtractive schedule needs a horizon to stay positive")
                if self.base_lr - self.decrement*(self.horizon // self.period) <= 0:
                    raise ConfigError("subtractive schedule reaches a non-positive rate before epoch %s"
                        % self.horizon)

    def to_dict(self):
        return asdict(self)

    def describe(self):
        if self.kind == 'multiplicative':
            return "lr %g x %g every %s epochs" % (self.base_lr, self.factor, self.period)
        return "lr %g - %g every %s epochs" % (self.base_lr, self.decrement, self.period)


# trajectory: 0.2, x0.7 every 3 epochs
TRAJECTORY_SCHEDULE = LrSchedule(0.2, factor=0.7, period=3)
# reconstruction: 1e-4 with a 5e-3 decay every 30 epochs, read as x(1 - 5e-3)
RECON_SCHEDULE = LrSchedule(1e-4, factor=0.995, period=30)


def lr_at_epoch(schedule, epoch):
    if epoch < 0:
        raise ValueError("epoch must be >= 0, got %s" % epoch)
    steps = epoch // schedule.period
    if schedule.kind == 'multiplicative':
        return schedule.base_lr * schedule.factor**steps
    lr = schedule.base_lr - schedule.decrement*steps
    if lr <= 0:
        raise ValueError("schedule is exhausted at epoch %s" % epoch)
    return lr


"""
Checkpoints

"""

def save_state(state, path):
    header = pack_header(MAGIC, state.step, len(state.shape), *state.shape)
    hyper = struct.pack('<3d', state.beta1, state.beta2, state.eps)
    payload = np.concatenate([state.m.ravel(), state.v.ravel()]).astype('<f8').tobytes()
    with open(path, 'wb') as f:
        f.write(header + hyper + payload)


def load_state(path):
    reader = Reader(read_file(path), name=str(path))
    reader.magic(MAGIC)
    reader.version()
    step, ndim = reader.u32(2)
    shape = reader.u32(ndim)
    beta1, beta2, eps = struct.unpack('<3d', reader.take(24, 'header'))
    size = int(np.prod(shape))
    moments = reader.array('<f8', 2*size)
    state = AdamState(shape, beta1, beta2, eps)
    state.m = moments[:size].reshape(shape).astype(np.float64)
    state.v = moments[size:].reshape(shape).astype(np.float64)
    state.step = step
    return state

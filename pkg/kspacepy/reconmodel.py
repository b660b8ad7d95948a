"""
Multi-frame reconstruction network.

A small encoder-decoder applied to every frame, whose input channels are
the real and imaginary parts of the frame and of its +-r temporal
neighbours. Forward and backward passes are written out in numpy.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .containers import pack_header, Reader, read_file
from .errors import ConfigError, FormatError, ShapeMismatchError, StaleCacheError


logger = logging.getLogger(__name__)

MAGIC = b'RPRM'
# keeps the residual magnitude differentiable at zero
MAGNITUDE_EPS = 1e-12


@dataclass(frozen=True)
class ArchConfig:
    """
    :channels: feature width at each resolution scale, the number of scales is its length
    :context: temporal context radius r, frames t-r..t+r feed frame t
    :dropout: inverted dropout rate on hidden activations in training mode
    """
    channels: tuple = (8, 16, 32)
    context: int = 1
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'channels', tuple(int(c) for c in self.channels))
        if len(self.channels) < 1 or min(self.channels) < 1:
            raise ConfigError("channels must be a non-empty list of positive widths, got %s" % (self.channels,))
        if int(self.context) != self.context or self.context < 0:
            raise ConfigError("context radius must be a non-negative integer, got %s" % self.context)
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1), got %s" % self.dropout)

    @property
    def depth(self):
        return len(self.channels)

    @property
    def in_channels(self):
        return 2*(2*self.context + 1)

    def check_image(self, height, width):
        step = 2**(self.depth - 1)
        if height % step or width % step:
            raise ShapeMismatchError("image %sx%s must be divisible by %s for %s scales"
                % (height, width, step, self.depth))

    def to_dict(self):
        d = asdict(self)
        d['channels'] = list(self.channels)
        return d

    def hash(self):
        return hashlib.md5(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def conv_layers(config):
    """ (name, out_channels, in_channels, kernel size) of every convolution in order """
    c = config.channels
    layers = [('enc0', c[0], config.in_channels, 3)]
    for s in range(1, config.depth):
        layers.append(('enc%d' % s, c[s], c[s-1], 3))
    for s in reversed(range(config.depth - 1)):
        layers.append(('dec%d' % s, c[s], c[s+1] + c[s], 3))
    layers.append(('final', 1, c[0], 1))
    return layers


def layer_layout(config):
    """ [(name, offset, shape)] covering the flat parameter vector """
    layout = []
    offset = 0
    for name, out_c, in_c, k in conv_layers(config):
        for suffix, shape in (('w', (out_c, in_c, k, k)), ('b', (out_c,))):
            layout.append(('%s.%s' % (name, suffix), offset, shape))
            offset += int(np.prod(shape))
    return layout


class ReconParams:
    """
    Flat parameter vector `theta` with its layer layout and a gradient buffer
    of identical layout.
    """
    def __init__(self, config, theta=None):
        self.config = config
        self.layout = layer_layout(config)
        self.size = self.layout[-1][1] + int(np.prod(self.layout[-1][2]))
        if theta is None:
            theta = np.zeros(self.size)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (self.size,):
            raise ShapeMismatchError("parameter vector has %s entries, layout needs %s" % (theta.size, self.size))
        self.theta = theta
        self.grad = np.zeros(self.size)
        self._index = {name: (offset, shape) for name, offset, shape in self.layout}

    def get(self, name, vector=None):
        """ view of block `name` inside theta, or inside `vector` of the same layout """
        offset, shape = self._index[name]
        vector = self.theta if vector is None else vector
        return vector[offset:offset+int(np.prod(shape))].reshape(shape)

    def copy(self):
        return ReconParams(self.config, self.theta.copy())

    def zero_grad(self):
        self.grad[:] = 0.0

    def hash(self):
        return hashlib.md5(self.theta.tobytes()).hexdigest()

    def __repr__(self):
        return "ReconParams(%s parameters, channels=%s)" % (self.size, self.config.channels)


def init_params(config, seed):
    """
    Uniform fan-in scaled weights, zero biases.
    Same (config, seed) always gives the same vector.
    """
    rng = np.random.default_rng(seed)
    params = ReconParams(config)
    for name, offset, shape in params.layout:
        if name.endswith('.w'):
            fan_in = shape[1]*shape[2]*shape[3]
            bound = 1/np.sqrt(fan_in)
            params.get(name)[...] = rng.uniform(-bound, bound, shape)
    return params


def reset(params, seed):
    """ fresh initialization with a new seed, the caller clears the optimizer state """
    logger.debug("reset reconstruction parameters with seed %s", seed)
    return init_params(params.config, seed)


"""
Layers

"""

def _conv(x, w, b):
    """ same padded stride 1 convolution (cross-correlation), x [N,C,H,W] w [O,C,k,k] """
    p = w.shape[-1] // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, w.shape[-2:], axis=(2, 3))
    y = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return y.transpose(0, 3, 1, 2) + b[None, :, None, None], win


def _conv_backward(dy, win, w):
    """ :returns: (dx, dw, db) """
    p = w.shape[-1] // 2
    dw = np.tensordot(win, dy, axes=([0, 2, 3], [0, 2, 3])).transpose(3, 0, 1, 2)
    db = dy.sum(axis=(0, 2, 3))
    dyp = np.pad(dy, ((0, 0), (0, 0), (p, p), (p, p))) if p else dy
    dwin = sliding_window_view(dyp, w.shape[-2:], axis=(2, 3))
    dx = np.tensordot(dwin, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return dx.transpose(0, 3, 1, 2), dw, db


def _pool(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h//2, 2, w//2, 2).mean(axis=(3, 5))


def _pool_backward(dy):
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) / 4


def _upsample(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def _upsample_backward(dy):
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h//2, 2, w//2, 2).sum(axis=(3, 5))


def magnitude(x):
    """ |z| of the [.., 2, H, W] real/imaginary channel pair """
    return np.sqrt(x[:, 0]**2 + x[:, 1]**2 + MAGNITUDE_EPS)


def context_index(n_frames, context):
    """ [n_frames, 2r+1] source frame of each stacked neighbour, edges replicated """
    offsets = np.arange(-context, context+1)
    return np.clip(np.arange(n_frames)[:, None] + offsets[None, :], 0, n_frames-1)


"""
Network

"""

def forward(params, x, training=False, rng=None):
    """
    Runs the network on a sequence of regridded frames.

    :x: [n_frames][2][H][W] real and imaginary channels
    :training: _False_ applies dropout when the config asks for it, drawing masks from `rng`
    :returns: (output [n_frames][1][H][W], cache for backward)
    """
    config = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 2:
        raise ShapeMismatchError("input must be [n_frames][2][H][W], got %s" % (x.shape,))
    config.check_image(*x.shape[2:])
    dropout = config.dropout if training else 0.0
    if dropout and rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")

    index = context_index(x.shape[0], config.context)
    stacked = x[index].reshape(x.shape[0], config.in_channels, *x.shape[2:])

    cache = {'theta': params.hash(), 'index': index, 'x': x, 'layers': {}}
    layers = cache['layers']

    def block(name, h):
        pre, win = _conv(h, params.get(name + '.w'), params.get(name + '.b'))
        out = np.maximum(pre, 0.0)
        mask = None
        if dropout:
            mask = (rng.random(out.shape) >= dropout) / (1 - dropout)
            out = out * mask
        layers[name] = {'win': win, 'relu': pre > 0, 'mask': mask}
        return out

    skips = [block('enc0', stacked)]
    for s in range(1, config.depth):
        skips.append(block('enc%d' % s, _pool(skips[-1])))

    h = skips[-1]
    for s in reversed(range(config.depth - 1)):
        cache['split%d' % s] = h.shape[1]
        h = block('dec%d' % s, np.concatenate([_upsample(h), skips[s]], axis=1))

    out, win = _conv(h, params.get('final.w'), params.get('final.b'))
    layers['final'] = {'win': win}

    # residual path: every frame adds its own regridded magnitude
    out = out + magnitude(x)[:, None]
    return out, cache


def backward(params, cache, upstream):
    """
    Exact gradients of sum(upstream * output) for the forward that produced `cache`.

    :returns: (grad_params flat vector, grad_input [n_frames][2][H][W])
    """
    if cache.get('theta') != params.hash():
        raise StaleCacheError("cache was produced with different reconstruction parameters")
    config = params.config
    x = cache['x']
    layers = cache['layers']
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (x.shape[0], 1) + x.shape[2:]:
        raise ShapeMismatchError("upstream %s does not match output %s"
            % (upstream.shape, (x.shape[0], 1) + x.shape[2:]))

    grad = np.zeros(params.size)

    def conv_back(name, dy):
        dx, dw, db = _conv_backward(dy, layers[name]['win'], params.get(name + '.w'))
        params.get(name + '.w', grad)[...] = dw
        params.get(name + '.b', grad)[...] = db
        return dx

    def block_back(name, dy):
        layer = layers[name]
        if layer['mask'] is not None:
            dy = dy * layer['mask']
        return conv_back(name, dy * layer['relu'])

    dh = conv_back('final', upstream)
    dskips = [None]*config.depth
    for s in range(config.depth - 1):
        dcat = block_back('dec%d' % s, dh)
        split = cache['split%d' % s]
        dskips[s] = dcat[:, split:]
        dh = _upsample_backward(dcat[:, :split])
    dskips[-1] = dh if dskips[-1] is None else dskips[-1] + dh

    dh = dskips[-1]
    for s in reversed(range(1, config.depth)):
        dh = _pool_backward(block_back('enc%d' % s, dh)) + dskips[s-1]
    dstacked = block_back('enc0', dh)

    # scatter the stacked neighbour channels back onto their source frames
    n_frames = x.shape[0]
    dstacked = dstacked.reshape(n_frames, 2*config.context + 1, 2, *x.shape[2:])
    dx = np.zeros_like(x)
    np.add.at(dx, cache['index'].ravel(), dstacked.reshape(-1, 2, *x.shape[2:]))

    mag = magnitude(x)
    dx += x * (upstream[:, 0] / mag)[:, None]
    return grad, dx


"""
Checkpoints

"""

def save_params(params, path):
    header = pack_header(MAGIC, params.size) + bytes.fromhex(params.config.hash())
    with open(path, 'wb') as f:
        f.write(header + params.theta.astype('<f8').tobytes())
    logger.debug("saved %r to %s", params, path)


def load_params(path, config):
    """ Reads an RPRM file, refusing one written for a different architecture """
    reader = Reader(read_file(path), name=str(path))
    reader.magic(MAGIC)
    reader.version()
    size, = reader.u32(1)
    digest = reader.take(16, 'header').hex()
    if digest != config.hash():
        raise FormatError("%s was saved for a different architecture" % path, section='header')
    theta = reader.array('<f8', size)
    return ReconParams(config, theta.astype(np.float64))

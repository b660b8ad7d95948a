"""
Synthetic dynamic phantoms standing in for fully sampled cine data,
their augmentation, dataset splits and the DSEQ sequence file format.
"""
import glob
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage
from skimage import draw

from .containers import pack_header, Reader, read_file
from .errors import ConfigError, FormatError


logger = logging.getLogger(__name__)

MAGIC = b'DSEQ'
SUFFIX = '.dseq'
SPLITS = ('train', 'test', 'val')
# 80% train, 17.5% test, 2.5% validation
DEFAULT_FRACTIONS = (0.8, 0.175, 0.025)
AUGMENT_P = 0.4
RESCALE_RANGE = (0.8, 1.2)
MASK_SIGMA_RANGE = (0.2, 0.5)


@dataclass
class FrameSequence:
    """
    One data sample, a fully sampled dynamic sequence.

    :frames: complex [n_frames][H][W], magnitude within [0, 1]
    :metadata: phantom parameters, source and applied augmentations
    """
    frames: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.complex128)
        if self.frames.ndim != 3 or min(self.frames.shape) < 1:
            raise ValueError("frames must be [n_frames][H][W], got %s" % (self.frames.shape,))
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames must be finite")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def shape(self):
        return self.frames.shape[1:]

    @property
    def magnitude(self):
        return np.abs(self.frames)

    def __eq__(self, other):
        return isinstance(other, FrameSequence) and np.array_equal(self.frames, other.frames) \
            and self.metadata == other.metadata


"""
Phantoms

"""

@dataclass(frozen=True)
class Ellipse:
    """
    An ellipse in normalized image coordinates [-1, 1]^2 moving periodically.

    :center: (row, col) at rest
    :axes: (semi axis along rows, semi axis along cols) at rest
    :angle: rotation in radians
    :intensity: magnitude painted inside, [0, 1]
    :motion: (row, col) amplitude of the sinusoidal centre motion
    :pulse: relative amplitude of the axes' sinusoidal beating
    :phase: phase offset of both motions, radians
    """
    center: tuple
    axes: tuple
    angle: float = 0.0
    intensity: float = 1.0
    motion: tuple = (0.0, 0.0)
    pulse: float = 0.0
    phase: float = 0.0

    def at(self, t, period):
        """ (center, axes) at time `t` """
        s = np.sin(2*np.pi*t/period + self.phase)
        center = np.asarray(self.center) + np.asarray(self.motion)*s
        axes = np.asarray(self.axes)*(1 + self.pulse*s)
        return center, axes

    def reach(self):
        """ furthest extent from the origin over a whole period """
        return np.max(np.abs(self.center) + np.abs(self.motion)) + np.max(self.axes)*(1 + abs(self.pulse))


@dataclass(frozen=True)
class PhantomSpec:
    """
    :size: (H, W)
    :n_frames: frames in the sequence
    :ellipses: painted in order, later ones over earlier ones
    :period: motion period in frames
    :texture: amplitude of smooth background texture inside painted regions
    :phase_ramp: (row, col, offset) of the linear image phase, cycles over the FOV and radians
    :times: optional per-frame time stamps, defaults to 0..n_frames-1
    """
    size: tuple
    n_frames: int
    ellipses: tuple
    period: float = 8.0
    texture: float = 0.0
    phase_ramp: tuple = (0.0, 0.0, 0.0)
    times: tuple = None

    def __post_init__(self):
        if len(self.size) != 2 or min(self.size) < 1 or self.n_frames < 1:
            raise ValueError("phantom needs a positive size and frame count")
        if self.period <= 0:
            raise ValueError("motion period must be positive")
        if self.times is not None and len(self.times) != self.n_frames:
            raise ValueError("%s time stamps for %s frames" % (len(self.times), self.n_frames))
        for e in self.ellipses:
            if min(e.axes) <= 0 or abs(e.pulse) >= 1:
                raise ValueError("degenerate ellipse %s" % (e,))
            if not 0 <= e.intensity <= 1:
                raise ValueError("ellipse intensity must be in [0, 1], got %s" % e.intensity)
            if e.reach() > 1:
                raise ValueError("ellipse %s leaves the field of view" % (e,))

    def time_stamps(self):
        return np.arange(self.n_frames, dtype=np.float64) if self.times is None else np.asarray(self.times)

    def to_dict(self):
        d = asdict(self)
        d['ellipses'] = [asdict(e) for e in self.ellipses]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d['ellipses'] = tuple(Ellipse(**{k: tuple(v) if isinstance(v, list) else v for k, v in e.items()})
            for e in d['ellipses'])
        for key in ('size', 'phase_ramp', 'times'):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def _grid(size):
    """ normalized (row, col) coordinates of pixel centres in [-1, 1] """
    rows = (np.arange(size[0]) + 0.5)/size[0]*2 - 1
    cols = (np.arange(size[1]) + 0.5)/size[1]*2 - 1
    return np.meshgrid(rows, cols, indexing='ij')


def _paint(img, center, axes, angle, value):
    """ fills an ellipse given in normalized coordinates, rotated in pixel space """
    H, W = img.shape
    # pixel centre i sits at (i + 0.5)/H*2 - 1
    rr, cc = draw.ellipse((center[0] + 1)*H/2 - 0.5, (center[1] + 1)*W/2 - 0.5,
        axes[0]*H/2, axes[1]*W/2, shape=img.shape, rotation=angle)
    img[rr, cc] = value


def generate_phantom(spec, seed):
    """
    Renders the spec into a FrameSequence. Deterministic in (spec, seed).
    Frames are rounded to single precision so the DSEQ files round-trip exactly.
    """
    rng = np.random.default_rng(seed)
    rows, cols = _grid(spec.size)
    texture = 0.0
    if spec.texture:
        noise = ndimage.gaussian_filter(rng.normal(size=spec.size), sigma=max(spec.size)/16)
        texture = spec.texture * noise/(np.abs(noise).max() + 1e-12)

    mag = np.zeros((spec.n_frames,) + tuple(spec.size))
    for i, t in enumerate(spec.time_stamps()):
        for e in spec.ellipses:
            center, axes = e.at(t, spec.period)
            _paint(mag[i], center, axes, e.angle, e.intensity)
        mag[i] = np.where(mag[i] > 0, mag[i] + texture, 0.0)
    mag = np.clip(mag, 0.0, None)
    top = mag.max()
    if top > 0:
        mag = mag/top

    pr, pc, offset = spec.phase_ramp
    phase = np.pi*(pr*rows + pc*cols) + offset
    frames = (mag*np.exp(1j*phase)[None]).astype(np.complex64)
    metadata = json.loads(json.dumps({'spec': spec.to_dict(), 'seed': int(seed)}))
    return FrameSequence(frames.astype(np.complex128), metadata)


def random_phantom_spec(rng, size=(64, 64), n_frames=8):
    """
    A cardiac-like phantom: a slowly moving body, a beating heart wall,
    a blood pool beating with it and a few static structures.
    """
    period = rng.uniform(0.75, 1.25)*n_frames
    phase = rng.uniform(0, 2*np.pi)
    body = Ellipse(center=tuple(rng.uniform(-0.05, 0.05, 2)), axes=tuple(rng.uniform(0.7, 0.85, 2)),
        angle=rng.uniform(0, np.pi), intensity=rng.uniform(0.25, 0.4),
        motion=tuple(rng.uniform(-0.03, 0.03, 2)), phase=phase)
    heart_center = tuple(rng.uniform(-0.2, 0.2, 2))
    pulse = rng.uniform(0.1, 0.25)
    heart = Ellipse(center=heart_center, axes=tuple(rng.uniform(0.22, 0.3, 2)),
        angle=rng.uniform(0, np.pi), intensity=rng.uniform(0.55, 0.75), pulse=pulse, phase=phase)
    pool = Ellipse(center=heart_center, axes=tuple(rng.uniform(0.1, 0.15, 2)),
        angle=rng.uniform(0, np.pi), intensity=1.0, pulse=pulse, phase=phase)
    extras = []
    for _ in range(rng.integers(1, 4)):
        extras.append(Ellipse(center=tuple(rng.uniform(-0.45, 0.45, 2)), axes=tuple(rng.uniform(0.04, 0.1, 2)),
            angle=rng.uniform(0, np.pi), intensity=rng.uniform(0.4, 0.9)))
    return PhantomSpec(size=tuple(size), n_frames=n_frames, ellipses=(body, heart, pool) + tuple(extras),
        period=period, texture=rng.uniform(0.02, 0.08),
        phase_ramp=tuple(rng.uniform(-1, 1, 2)) + (rng.uniform(-np.pi, np.pi),))


def build_dataset(n_samples, size=(64, 64), n_frames=8, seed=0, workers=1):
    """
    `n_samples` random phantom sequences, sample i drawn from the i-th child of `seed`.
    """
    children = np.random.SeedSequence(seed).spawn(n_samples)

    def make(child):
        rng = np.random.default_rng(child)
        spec = random_phantom_spec(rng, size, n_frames)
        return generate_phantom(spec, int(rng.integers(2**31)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dataset = list(pool.map(make, children))
    else:
        dataset = [make(c) for c in children]
    logger.info("generated %s phantom sequences of %s frames at %sx%s", n_samples, n_frames, *size)
    return dataset


"""
Augmentation

"""

def flip(seq, axis):
    """ exact flip of every frame along image `axis` (0 vertical, 1 horizontal) """
    return FrameSequence(np.flip(seq.frames, axis=axis+1).copy(), dict(seq.metadata))


def _fit(img, shape):
    """ centre crop or zero pad to `shape` """
    out = np.zeros(shape, dtype=img.dtype)
    src = [slice(max(0, (n - s)//2), max(0, (n - s)//2) + min(n, s)) for n, s in zip(img.shape, shape)]
    dst = [slice(max(0, (s - n)//2), max(0, (s - n)//2) + min(n, s)) for n, s in zip(img.shape, shape)]
    out[tuple(dst)] = img[tuple(src)]
    return out


def _clamp(frames):
    mag = np.abs(frames)
    return np.where(mag > 1, frames/np.maximum(mag, 1e-300), frames)


def rescale(seq, factor):
    """ bilinear zoom of every frame by `factor`, centre cropped or padded back """
    shape = seq.shape
    frames = np.empty_like(seq.frames)
    for i, f in enumerate(seq.frames):
        re = ndimage.zoom(f.real, factor, order=1)
        im = ndimage.zoom(f.imag, factor, order=1)
        frames[i] = _fit(re, shape) + 1j*_fit(im, shape)
    return FrameSequence(_clamp(frames), dict(seq.metadata))


def gaussian_mask(seq, center, sigma):
    """ multiplies every frame by exp(-|p - center|^2 / 2 sigma^2), pixel units """
    r, c = np.meshgrid(np.arange(seq.shape[0]), np.arange(seq.shape[1]), indexing='ij')
    mask = np.exp(-((r - center[0])**2 + (c - center[1])**2)/(2*sigma**2))
    return FrameSequence(seq.frames*mask[None], dict(seq.metadata))


def augment(seq, rng, p=AUGMENT_P):
    """
    Flip, rescale and Gaussian mask, each applied with probability `p`,
    the same transform for every frame of the sequence.
    The applied augmentations are appended to metadata['augmentations'].
    """
    applied = []
    out = seq
    # draw every decision up front so the stream is the same whatever fires
    fire = rng.random(3) < p
    axis = int(rng.integers(2))
    factor = rng.uniform(*RESCALE_RANGE)
    H, W = seq.shape
    center = (rng.uniform(0, H), rng.uniform(0, W))
    sigma = rng.uniform(*MASK_SIGMA_RANGE)*min(H, W)

    if fire[0]:
        out = flip(out, axis)
        applied.append({'name': 'flip', 'axis': axis})
    if fire[1]:
        out = rescale(out, factor)
        applied.append({'name': 'rescale', 'factor': float(factor)})
    if fire[2]:
        out = gaussian_mask(out, center, sigma)
        applied.append({'name': 'mask', 'center': [float(c) for c in center], 'sigma': float(sigma)})

    if not applied:
        return seq
    metadata = dict(seq.metadata)
    metadata['augmentations'] = list(seq.metadata.get('augmentations', [])) + applied
    return FrameSequence(out.frames, metadata)


"""
Splits

"""

def split_sizes(n, fractions=DEFAULT_FRACTIONS):
    """
    (train, test, val) sizes: test and validation round half up,
    the remainder goes to training.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ConfigError("split fractions must be three non-negative numbers summing to 1, got %s"
            % (fractions,))
    n_test = int(np.floor(fractions[1]*n + 0.5))
    n_val = int(np.floor(fractions[2]*n + 0.5))
    if n_test + n_val > n:
        raise ConfigError("cannot split %s samples with fractions %s" % (n, fractions))
    return n - n_test - n_val, n_test, n_val


def split_dataset(samples, fractions=DEFAULT_FRACTIONS, seed=0):
    """ deterministic shuffled (train, test, val) split """
    n_train, n_test, n_val = split_sizes(len(samples), fractions)
    order = np.random.default_rng(seed).permutation(len(samples))
    test = [samples[i] for i in order[:n_test]]
    val = [samples[i] for i in order[n_test:n_test+n_val]]
    train = [samples[i] for i in order[n_test+n_val:]]
    return train, test, val


"""
Files

"""

def save_sequence(seq, path):
    """ DSEQ payload as interleaved little-endian float32 (re, im), metadata in a JSON sidecar """
    n_frames, H, W = seq.frames.shape
    payload = np.empty(seq.frames.shape + (2,), dtype='<f4')
    payload[..., 0] = seq.frames.real
    payload[..., 1] = seq.frames.imag
    with open(path, 'wb') as f:
        f.write(pack_header(MAGIC, n_frames, H, W) + payload.tobytes())
    with open(str(path) + '.json', 'w') as f:
        json.dump(seq.metadata, f, sort_keys=True)


def load_sequence(path):
    reader = Reader(read_file(path), name=str(path))
    reader.magic(MAGIC)
    reader.version()
    n_frames, H, W = reader.u32(3)
    payload = reader.array('<f4', n_frames*H*W*2).reshape(n_frames, H, W, 2)
    frames = payload[..., 0].astype(np.float64) + 1j*payload[..., 1].astype(np.float64)
    metadata = {}
    sidecar = str(path) + '.json'
    if os.path.exists(sidecar):
        try:
            with open(sidecar) as f:
                metadata = json.load(f)
        except ValueError as e:
            raise FormatError("%s: unreadable sidecar (%s)" % (sidecar, e), section='sidecar')
    return FrameSequence(frames, metadata)


def load_directory(path):
    """ every sequence file of a directory, ordered by filename """
    files = sorted(glob.glob(os.path.join(path, '*' + SUFFIX)))
    return [load_sequence(f) for f in files]


def write_dataset(dataset, directory, fractions=DEFAULT_FRACTIONS, seed=0):
    """
    Writes seq_00000.dseq ... and a splits.json manifest naming the files of each split.

    :returns: the manifest
    """
    os.makedirs(directory, exist_ok=True)
    names = ['seq_%05d%s' % (i, SUFFIX) for i in range(len(dataset))]
    for name, seq in zip(names, dataset):
        save_sequence(seq, os.path.join(directory, name))
    train, test, val = split_dataset(names, fractions, seed)
    manifest = {'train': train, 'test': test, 'val': val,
        'fractions': list(fractions), 'seed': seed}
    with open(os.path.join(directory, 'splits.json'), 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("wrote %s sequences to %s (train %s, test %s, val %s)",
        len(dataset), directory, len(train), len(test), len(val))
    return manifest


def load_split(directory, split):
    """ the sequences of one named split of a dataset directory """
    if split not in SPLITS:
        raise ValueError("split must be one of %s, got %r" % (SPLITS, split))
    manifest_path = os.path.join(directory, 'splits.json')
    try:
        with open(manifest_path) as f:
            manifest = json.load(f)
    except ValueError as e:
        raise FormatError("%s: unreadable manifest (%s)" % (manifest_path, e), section='manifest')
    return [load_sequence(os.path.join(directory, name)) for name in manifest[split]]

import hashlib
import logging

import numpy as np

from .containers import pack_header, Reader, read_file
from .errors import ShapeMismatchError


logger = logging.getLogger(__name__)

GOLDEN_ANGLE = 111.246117975
MAGIC = b'KTRJ'
KINDS = ('radial', 'golden')


class TrajectorySet:
    """
    The learnable k-space sampling coordinates for a whole frame sequence.

    :coords: array [n_frames][n_shots][m][2] of (kx, ky) in normalized
        units, where +-0.5 is the Nyquist edge of the image matrix.
        kx runs along image axis 0 (rows), ky along axis 1 (columns).

    The shape is fixed on creation, `coords` may be updated in place
    or reassigned with an array of the same shape.

    properties
    :n_frames: frames in the sequence (1 for a trajectory shared by all frames)
    :n_shots: RF excitations per frame
    :m: samples per shot
    """
    def __init__(self, coords):
        coords = np.array(coords, dtype=np.float64)
        if coords.ndim != 4 or coords.shape[-1] != 2:
            raise ValueError("coords must have shape [n_frames][n_shots][m][2], got %s" % (coords.shape,))
        if min(coords.shape[:3]) < 1:
            raise ValueError("trajectory dimensions must be positive, got %s" % (coords.shape[:3],))
        if not np.all(np.isfinite(coords)):
            raise ValueError("trajectory coordinates must be finite")
        self._shape = coords.shape
        self._coords = coords

    @property
    def coords(self):
        return self._coords

    @coords.setter
    def coords(self, value):
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._shape:
            raise ShapeMismatchError("cannot change trajectory shape %s to %s" % (self._shape, value.shape))
        self._coords = value

    @property
    def shape(self):
        return self._shape

    @property
    def n_frames(self):
        return self._shape[0]

    @property
    def n_shots(self):
        return self._shape[1]

    @property
    def m(self):
        return self._shape[2]

    def frame(self, t):
        """ Coordinates of frame `t`, [n_shots][m][2] """
        return self._coords[t]

    def copy(self):
        return TrajectorySet(self._coords.copy())

    def broadcast(self, n_frames):
        """
        A per-frame copy of a shared (single frame) trajectory
        """
        if self.n_frames != 1:
            raise ValueError("only a single-frame trajectory can be broadcast")
        return TrajectorySet(np.repeat(self._coords, n_frames, axis=0))

    def in_range(self):
        """ True when every coordinate lies in the closed [-0.5, 0.5] box """
        return bool(np.all(np.abs(self._coords) <= 0.5))

    def hash(self):
        """ md5 of the raw coordinates, for bitwise comparisons in logs """
        return hashlib.md5(np.ascontiguousarray(self._coords).tobytes()).hexdigest()

    def __eq__(self, other):
        return isinstance(other, TrajectorySet) and self._shape == other._shape \
            and np.array_equal(self._coords, other._coords)

    def __repr__(self):
        return "TrajectorySet(n_frames=%s, n_shots=%s, m=%s)" % self._shape[:3]

    def dataframe(self, frame=None):
        """
        Long format rows of (frame, shot, sample, kx, ky),
        optionally for just one `frame`.
        """
        import pandas as pd
        frames = range(self.n_frames) if frame is None else [frame]
        f, s, j = np.meshgrid(np.array(list(frames)), np.arange(self.n_shots),
            np.arange(self.m), indexing='ij')
        coords = self._coords[list(frames)]
        return pd.DataFrame({
            'frame': f.ravel(),
            'shot': s.ravel(),
            'sample': j.ravel(),
            'kx': coords[..., 0].ravel(),
            'ky': coords[..., 1].ravel(),
        })


"""
Initializers

"""

def _check_dims(n_frames, n_shots, m, k_extent):
    for name, value in (('n_frames', n_frames), ('n_shots', n_shots), ('m', m)):
        if int(value) != value or value < 1:
            raise ValueError("%s must be a positive integer, got %s" % (name, value))
    if not 0 < k_extent <= 0.5:
        raise ValueError("k_extent must be in (0, 0.5], got %s" % k_extent)


def _spokes(angles, m, k_extent):
    """
    Straight spokes through the origin at the given `angles` (radians),
    each sampled at `m` equispaced points over [-k_extent, k_extent].
    """
    radius = np.linspace(-k_extent, k_extent, m) if m > 1 else np.zeros(1)
    angles = np.asarray(angles, dtype=np.float64)
    spokes = np.empty((len(angles), m, 2))
    spokes[..., 0] = np.cos(angles)[:, None] * radius[None, :]
    spokes[..., 1] = np.sin(angles)[:, None] * radius[None, :]
    # rotation can overshoot the box by an ulp
    return np.clip(spokes, -0.5, 0.5)


def radial_angles(n_shots):
    """ spoke i at i*pi/n_shots """
    return np.arange(n_shots) * (np.pi / n_shots)


def init_radial(n_frames, n_shots, m, k_extent=0.5):
    """
    Every frame gets the same `n_shots` spokes, uniformly rotated over [0, pi)
    """
    _check_dims(n_frames, n_shots, m, k_extent)
    frame = _spokes(radial_angles(n_shots) + 0.0, m, k_extent)
    return TrajectorySet(np.repeat(frame[None], n_frames, axis=0))


def init_golden_angle(n_frames, n_shots, m, k_extent=0.5, increment=GOLDEN_ANGLE):
    """
    Golden angle rotated radial sampling,
    frame t is the radial pattern rotated by t * `increment` degrees.
    """
    _check_dims(n_frames, n_shots, m, k_extent)
    base = radial_angles(n_shots)
    frames = [_spokes(base + np.deg2rad(increment*t), m, k_extent) for t in range(n_frames)]
    return TrajectorySet(np.stack(frames))


def init_trajectory(kind, n_frames, n_shots, m, k_extent=0.5):
    """ Dispatches on `kind` {radial|golden} """
    if kind == 'radial':
        return init_radial(n_frames, n_shots, m, k_extent)
    elif kind == 'golden':
        return init_golden_angle(n_frames, n_shots, m, k_extent)
    raise ValueError("unknown trajectory kind %r, expected one of %s" % (kind, KINDS))


def clone_frame_trajectory(t_src, t_dst, traj):
    """
    Returns a new TrajectorySet where frame `t_dst` is a copy of frame `t_src`
    """
    for t in (t_src, t_dst):
        if not 0 <= t < traj.n_frames:
            raise IndexError("frame index %s out of range for %s frames" % (t, traj.n_frames))
    out = traj.copy()
    out.coords[t_dst] = traj.coords[t_src]
    return out


"""
Serialization

"""

def save_trajectory(traj, path):
    header = pack_header(MAGIC, traj.n_frames, traj.n_shots, traj.m)
    payload = np.ascontiguousarray(traj.coords, dtype='<f8').tobytes()
    with open(path, 'wb') as f:
        f.write(header + payload)
    logger.debug("saved %r to %s", traj, path)


def load_trajectory(path):
    reader = Reader(read_file(path), name=str(path))
    reader.magic(MAGIC)
    reader.version()
    n_frames, n_shots, m = reader.u32(3)
    coords = reader.array('<f8', n_frames*n_shots*m*2)
    return TrajectorySet(coords.reshape(n_frames, n_shots, m, 2).astype(np.float64))

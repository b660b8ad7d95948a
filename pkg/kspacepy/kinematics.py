"""
Scanner hardware limits and the projection of trajectories onto
curves with bounded speed and acceleration.
"""
import json
import logging
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, InfeasibleTrajectoryError, ProjectionWarning, ShapeMismatchError
from .trajectory import TrajectorySet


logger = logging.getLogger(__name__)

# largest float strictly below the upper edge of the box
BOX_HIGH = np.nextafter(0.5, 0.0)
DEFAULT_ITERS = 200
DEFAULT_TOL = 1e-9
# bisection steps of the pinned restore
RESTORE_STEPS = 60


@dataclass(frozen=True)
class KinematicLimits:
    """
    Gradient hardware limits.

    :g_max: peak gradient amplitude, mT/m
    :s_max: maximum slew rate, T/m/s
    :dt: dwell time between consecutive samples, seconds
    :gamma: gyromagnetic ratio, Hz/T (protons by default)
    :fov: field of view, meters
    :n_pixels: matrix size converting cycles per FOV into trajectory units
        (1 keeps the bounds in cycles per FOV)
    :endpoint_pinning: keep the first and last sample of each shot fixed during projection
    """
    g_max: float = 40.0
    s_max: float = 200.0
    dt: float = 10e-6
    gamma: float = 42.576e6
    fov: float = 0.3
    n_pixels: int = 1
    endpoint_pinning: bool = False

    def __post_init__(self):
        for name in ('g_max', 's_max', 'dt', 'gamma', 'fov', 'n_pixels'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError("kinematic limit %s must be strictly positive, got %s" % (name, value))

    def to_dict(self):
        return asdict(self)


def difference_bounds(limits):
    """
    The largest allowed per-step |dk| and |d2k| in trajectory units

    :returns: (v_max, a_max)
    """
    scale = limits.fov / limits.n_pixels
    v_max = limits.gamma * limits.g_max * 1e-3 * limits.dt * scale
    a_max = limits.gamma * limits.s_max * limits.dt**2 * scale
    return v_max, a_max


@dataclass
class FeasibilityReport:
    """
    Outcome of auditing a trajectory against the limits.

    :max_speed_violation: worst |dk| - v_max over all steps (0 if none)
    :max_accel_violation: worst |d2k| - a_max (0 if none)
    :feasible: both violations within `tol` times their bound
    :per_shot_worst: (frame, shot, sample, kind) for each violating shot,
        kind is 'speed' or 'accel'
    """
    max_speed_violation: float
    max_accel_violation: float
    feasible: bool
    per_shot_worst: list = field(default_factory=list)
    v_max: float = 0.0
    a_max: float = 0.0
    tol: float = DEFAULT_TOL
    converged: bool = True

    def to_dict(self):
        d = asdict(self)
        d['per_shot_worst'] = [list(w) for w in self.per_shot_worst]
        return d

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _differences(c):
    """ first and second differences along the sample axis of [..., m, 2] """
    d1 = np.linalg.norm(np.diff(c, axis=-2), axis=-1)
    d2 = np.linalg.norm(c[..., 2:, :] - 2*c[..., 1:-1, :] + c[..., :-2, :], axis=-1)
    return d1, d2


def _shot_excess(c, v_max, a_max):
    """ per-shot worst relative excess over the bounds, [...] """
    d1, d2 = _differences(c)
    speed = (d1.max(axis=-1) - v_max)/v_max if d1.shape[-1] else np.zeros(c.shape[:-2])
    accel = (d2.max(axis=-1) - a_max)/a_max if d2.shape[-1] else np.zeros(c.shape[:-2])
    return np.maximum(speed, accel)


def audit(traj, limits, tol=DEFAULT_TOL):
    """
    Checks the speed and acceleration of every shot.
    `tol` is relative to each bound.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    v_max, a_max = difference_bounds(limits)
    d1, d2 = _differences(traj.coords)
    ex1 = np.maximum(d1 - v_max, 0.0)
    ex2 = np.maximum(d2 - a_max, 0.0)
    speed_violation = float(ex1.max()) if ex1.size else 0.0
    accel_violation = float(ex2.max()) if ex2.size else 0.0

    worst = []
    for f in range(traj.n_frames):
        for s in range(traj.n_shots):
            # compare relative excess so the two kinds are on one scale
            r1 = ex1[f, s].max()/v_max if ex1.shape[-1] else 0.0
            r2 = ex2[f, s].max()/a_max if ex2.shape[-1] else 0.0
            if max(r1, r2) > tol:
                if r1 >= r2:
                    worst.append((f, s, int(ex1[f, s].argmax()), 'speed'))
                else:
                    # second difference i is centred on sample i+1
                    worst.append((f, s, int(ex2[f, s].argmax())+1, 'accel'))

    feasible = speed_violation <= tol*v_max and accel_violation <= tol*a_max
    return FeasibilityReport(speed_violation, accel_violation, bool(feasible), worst,
        v_max=v_max, a_max=a_max, tol=tol)


"""
Projection

"""

def _project_pairs(c, start, v_max):
    """ closed form projection onto |c[i+1]-c[i]| <= v_max for disjoint pairs i = start, start+2, ... """
    i = np.arange(start, c.shape[1]-1, 2)
    if len(i) == 0:
        return c
    d = c[:, i+1] - c[:, i]
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    shrink = np.where(n > v_max, (n - v_max)/np.where(n > 0, n, 1.0), 0.0)
    step = 0.5*shrink*d
    c = c.copy()
    c[:, i] += step
    c[:, i+1] -= step
    return c


def _project_triples(c, start, a_max):
    """ closed form projection onto |c[i]-2c[i+1]+c[i+2]| <= a_max for disjoint triples """
    i = np.arange(start, c.shape[1]-2, 3)
    if len(i) == 0:
        return c
    d = c[:, i] - 2*c[:, i+1] + c[:, i+2]
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    shrink = np.where(n > a_max, (n - a_max)/np.where(n > 0, n, 1.0), 0.0)
    # |(1,-2,1)|^2 = 6
    step = shrink*d/6.0
    c = c.copy()
    c[:, i] -= step
    c[:, i+1] += 2*step
    c[:, i+2] -= step
    return c


def _projectors(v_max, a_max, pinned):
    """ the convex sets cycled over by Dykstra's algorithm """
    sets = [
        lambda c: _project_pairs(c, 0, v_max),
        lambda c: _project_pairs(c, 1, v_max),
        lambda c: _project_triples(c, 0, a_max),
        lambda c: _project_triples(c, 1, a_max),
        lambda c: _project_triples(c, 2, a_max),
        lambda c: np.clip(c, -0.5, BOX_HIGH),
    ]
    if pinned is not None:
        def pin(c):
            c = c.copy()
            c[:, 0] = pinned[:, 0]
            c[:, -1] = pinned[:, -1]
            return c
        sets.append(pin)
    return sets


def _dykstra(x, v_max, a_max, iters, pinning, tol):
    """
    Dykstra's alternating projection of every shot in `x` [N, m, 2]
    onto the intersection of the speed, acceleration and box sets.

    :returns: the iterate, the number of cycles run and whether it converged
    """
    pinned = x[:, [0, -1]].copy() if pinning else None
    sets = _projectors(v_max, a_max, pinned)
    increments = [np.zeros_like(x) for _ in sets]
    c = x.copy()
    for it in range(1, iters+1):
        previous = c
        for k, project in enumerate(sets):
            y = project(c + increments[k])
            increments[k] = c + increments[k] - y
            c = y
        change = np.abs(c - previous).max()
        if change <= 1e-14 and _shot_excess(c, v_max, a_max).max() <= tol:
            return c, it, True
    return c, iters, _shot_excess(c, v_max, a_max).max() <= tol


def _restore(c, v_max, a_max):
    """
    Contracts each shot toward its centroid by the smallest factor
    that makes it exactly feasible. Stays inside the box, which is convex.
    """
    d1, d2 = _differences(c)
    scale = np.ones(c.shape[0])
    if d1.shape[-1]:
        top = d1.max(axis=-1)
        scale = np.minimum(scale, np.where(top > v_max, v_max/np.where(top > 0, top, 1.0), 1.0))
    if d2.shape[-1]:
        top = d2.max(axis=-1)
        scale = np.minimum(scale, np.where(top > a_max, a_max/np.where(top > 0, top, 1.0), 1.0))
    if np.all(scale == 1.0):
        return c
    centroid = c.mean(axis=1, keepdims=True)
    s = scale[:, None, None]
    return np.where(s < 1.0, centroid + s*(c - centroid), c)


def _restore_pinned(c, v_max, a_max):
    """
    Blends each shot toward the straight line between its endpoints by the
    smallest amount that makes it feasible. The line has no acceleration,
    so this works whenever the endpoints are within (m-1) v_max of each other.

    :returns: the shots and a mask of those whose endpoints are too far apart
    """
    m = c.shape[1]
    w = np.linspace(0.0, 1.0, m)[None, :, None]
    line = (1 - w)*c[:, :1] + w*c[:, -1:]
    inside = np.all((c[:, [0, -1]] >= -0.5) & (c[:, [0, -1]] <= BOX_HIGH), axis=(1, 2))
    stuck = (np.linalg.norm(c[:, -1] - c[:, 0], axis=-1) > (m - 1)*v_max) | ~inside

    # largest blend factor in [0, 1] that stays feasible
    lo = np.zeros(len(c))
    hi = np.ones(len(c))
    for _ in range(RESTORE_STEPS):
        mid = 0.5*(lo + hi)
        good = _shot_excess(line + mid[:, None, None]*(c - line), v_max, a_max) <= 0
        lo = np.where(good, mid, lo)
        hi = np.where(good, hi, mid)
    restored = line + lo[:, None, None]*(c - line)
    keep = (_shot_excess(c, v_max, a_max) <= 0) | stuck
    return np.where(keep[:, None, None], c, restored), stuck


def project_feasible(traj, limits, iters=DEFAULT_ITERS, tol=DEFAULT_TOL, with_info=False):
    """
    Euclidean projection of every shot onto the set of curves with
    |dk| <= v_max and |d2k| <= a_max, clamped to the [-0.5, 0.5) box.

    Shots that already satisfy the limits are returned untouched.
    Infeasible shots run through Dykstra's algorithm for at most `iters`
    cycles; a final contraction toward each shot's centroid removes
    whatever residual violation is left. With endpoint pinning the shot is
    blended toward the line between its endpoints instead, and endpoints
    further apart than (m-1) v_max raise InfeasibleTrajectoryError.

    :with_info: _False_ also return a FeasibilityReport with `converged` set
    """
    if iters < 1:
        raise ValueError("iters must be >= 1, got %s" % iters)
    v_max, a_max = difference_bounds(limits)
    shots = traj.coords.reshape(-1, traj.m, 2)
    out = shots.copy()

    in_box = np.all((shots >= -0.5) & (shots <= BOX_HIGH), axis=(1, 2))
    todo = ~(in_box & (_shot_excess(shots, v_max, a_max) <= tol))

    converged = True
    stuck = np.zeros(0, dtype=bool)
    if np.any(todo):
        c, cycles, converged = _dykstra(shots[todo], v_max, a_max, iters, limits.endpoint_pinning, tol)
        if limits.endpoint_pinning:
            c, stuck = _restore_pinned(c, v_max, a_max)
        else:
            c = _restore(c, v_max, a_max)
        out[todo] = c
        logger.debug("projected %s of %s shots in %s cycles (converged=%s)",
            int(todo.sum()), len(shots), cycles, converged)
        if not converged:
            warnings.warn("kinematic projection did not converge within %s iterations" % iters,
                ProjectionWarning)

    projected = TrajectorySet(out.reshape(traj.shape))
    if np.any(stuck):
        raise InfeasibleTrajectoryError("%s pinned shots have endpoints no feasible curve can join"
            % int(stuck.sum()), audit(projected, limits))
    if with_info:
        report = audit(projected, limits, tol=max(tol, 1e-6))
        report.converged = bool(converged)
        return projected, report
    return projected


def project_gradient_passthrough(grad, traj_pre, traj_post):
    """
    Projection is applied to the parameters between optimizer steps and is
    not part of the loss graph, so the gradient passes through unchanged.
    """
    grad = np.asarray(grad)
    if grad.shape != traj_pre.shape or traj_pre.shape != traj_post.shape:
        raise ShapeMismatchError("gradient %s and trajectories %s / %s disagree"
            % (grad.shape, traj_pre.shape, traj_post.shape))
    return grad

"""
End-to-end differentiable map from fully sampled frames to the
reconstruction loss:

    Z -> X = F_K Z (+ noise) -> Z~ = F_K^H X / M -> R_theta(Z~) -> MSE(., |Z|)

with M the number of samples per frame. Both NUFFT stages depend on the
trajectory K, and both are differentiated.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTrajectoryError, ShapeMismatchError, StaleCacheError
from .kinematics import audit
from .nufft import NufftOperator
from . import reconmodel


logger = logging.getLogger(__name__)


@dataclass
class PipelineState:
    """
    Everything a training step reads.

    :traj: TrajectorySet, one frame in shared mode else one per frame
    :recon: ReconParams
    :limits: KinematicLimits checked in strict mode
    :kernel: GriddingKernel for the fast NUFFT, None for the exact path
    :shared: one trajectory broadcast to every frame
    :strict: refuse infeasible trajectories
    :noise: standard deviation of complex Gaussian noise added to the samples
    """
    traj: object
    recon: object
    limits: object
    kernel: object = None
    shared: bool = False
    strict: bool = False
    noise: float = 0.0

    def check(self, n_frames):
        if self.shared and self.traj.n_frames != 1:
            raise ShapeMismatchError("shared mode needs a single trajectory frame, got %s" % self.traj.n_frames)
        if not self.shared and self.traj.n_frames != n_frames:
            raise ShapeMismatchError("%s trajectory frames for sequences of %s frames"
                % (self.traj.n_frames, n_frames))

    def frame_coords(self, t):
        return self.traj.frame(0 if self.shared else t)

    def operators(self, n_frames, shape):
        """ one NufftOperator per frame, the shared one repeated """
        if self.shared:
            return [NufftOperator(self.traj.frame(0), shape, self.kernel)]*n_frames
        return [NufftOperator(self.traj.frame(t), shape, self.kernel) for t in range(n_frames)]


def stack_frames(batch):
    """ [B, n_frames, H, W] complex from FrameSequences or arrays """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    frames = [np.asarray(getattr(item, 'frames', item)) for item in batch]
    shapes = {f.shape for f in frames}
    if len(shapes) != 1 or frames[0].ndim != 3:
        raise ShapeMismatchError("batch sequences must share one [n_frames, H, W] shape, got %s" % shapes)
    return np.stack(frames).astype(np.complex128)


def regrid(state, frames, rng=None):
    """
    Subsample and regrid a batch of sequences.

    :returns: (samples X [B, F, n_shots, m], regridded Z~ [B, F, H, W], operators)
    """
    B, F, H, W = frames.shape
    state.check(F)
    ops = state.operators(F, (H, W))
    scale = 1.0 / ops[0].n_samples
    samples = np.stack([ops[t].forward(frames[:, t]) for t in range(F)], axis=1)
    if state.noise:
        if rng is None:
            raise ValueError("k-space noise needs an explicit rng")
        samples = samples + state.noise/np.sqrt(2) * (rng.normal(size=samples.shape)
            + 1j*rng.normal(size=samples.shape))
    regridded = scale*np.stack([ops[t].adjoint(samples[:, t]) for t in range(F)], axis=1)
    return samples, regridded, ops


def forward_loss(state, batch, training=False, rng=None):
    """
    Mean squared error between reconstructed and true magnitudes over
    every sample, frame and pixel of the batch.

    :batch: list of FrameSequence (or [n_frames, H, W] complex arrays)
    :training: _False_ enables dropout in the reconstruction model
    :rng: generator for k-space noise and dropout masks
    :returns: (loss, caches for backward)
    """
    if state.strict:
        report = audit(state.traj, state.limits)
        if not report.feasible:
            raise InfeasibleTrajectoryError("trajectory violates the kinematic limits", report=report)

    frames = stack_frames(batch)
    samples, regridded, ops = regrid(state, frames, rng)
    target = np.abs(frames)

    outputs = []
    recon_caches = []
    for b in range(frames.shape[0]):
        x = np.stack([regridded[b].real, regridded[b].imag], axis=1)
        out, cache = reconmodel.forward(state.recon, x, training=training, rng=rng)
        outputs.append(out[:, 0])
        recon_caches.append(cache)
    outputs = np.stack(outputs)

    residual = outputs - target
    loss = float(np.mean(residual**2))
    caches = {
        'traj': state.traj.hash(),
        'frames': frames,
        'samples': samples,
        'ops': ops,
        'residual': residual,
        'recon': recon_caches,
        'outputs': outputs,
    }
    return loss, caches


def backward(state, caches):
    """
    Gradients of the forward_loss that produced `caches`.

    :returns: (grad_traj shaped like state.traj.coords, grad_recon flat vector)
    """
    if caches.get('traj') != state.traj.hash():
        raise StaleCacheError("cache was produced with a different trajectory")
    frames = caches['frames']
    samples = caches['samples']
    ops = caches['ops']
    residual = caches['residual']
    B, F = frames.shape[:2]
    scale = 1.0 / ops[0].n_samples

    upstream = 2*residual / residual.size
    grad_recon = np.zeros(state.recon.size)
    # dL/dRe(Z~) + i dL/dIm(Z~), already multiplied by the regridding scale
    G = np.empty(frames.shape, dtype=np.complex128)
    for b in range(B):
        g, gx = reconmodel.backward(state.recon, caches['recon'][b], upstream[b][:, None])
        grad_recon += g
        G[b] = scale*(gx[:, 0] + 1j*gx[:, 1])

    grad_traj = np.zeros(state.traj.shape)
    for t in range(F):
        op = ops[t]
        dsamples = op.forward(G[:, t])
        # coordinates enter through the sampling and through the regridding
        g = op.grad_wrt_coords(frames[:, t], dsamples) + op.grad_wrt_coords(G[:, t], samples[:, t])
        grad_traj[0 if state.shared else t] += g

    state.recon.grad[:] = grad_recon
    return grad_traj, grad_recon

"""
Non-uniform Fourier operators between a centred image grid and
arbitrary k-space locations.

    X[j] = sum_{x,y} img[x, y] exp(-2 pi i (kx_j u(x) + ky_j v(y)))

with u, v the centred integer pixel grids {-N/2, ..., N/2-1}.
The forward is non-unitary and the adjoint is its exact conjugate transpose.
Two paths are offered, an exact brute-force evaluation and a
Kaiser-Bessel gridding approximation on an oversampled grid.
"""
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as sfft
from scipy.special import i0

from .errors import ShapeMismatchError


logger = logging.getLogger(__name__)

# rows of the exact phase matrix evaluated at once
DIRECT_CHUNK = 1024


@dataclass(frozen=True)
class GriddingKernel:
    """
    Kaiser-Bessel interpolation kernel for the fast path.

    :width: kernel width W in oversampled grid cells
    :oversamp: grid oversampling factor sigma
    """
    width: int = 8
    oversamp: float = 2.0

    def __post_init__(self):
        if self.width < 2:
            raise ValueError("kernel width must be >= 2, got %s" % self.width)
        if self.oversamp < 1.25:
            raise ValueError("oversampling must be >= 1.25, got %s" % self.oversamp)

    @property
    def beta(self):
        """ shape parameter of Beatty et al. for (W, sigma) """
        w, a = self.width, self.oversamp
        return np.pi * np.sqrt(w**2 / a**2 * (a - 0.5)**2 - 0.8)

    def grid_size(self, n):
        return int(np.ceil(self.oversamp * n))

    def __call__(self, d):
        """ kernel value at distance `d` (grid cells), zero outside the support """
        r = 1 - (2*np.asarray(d)/self.width)**2
        return np.where(r >= 0, i0(self.beta * np.sqrt(np.maximum(r, 0.0))), 0.0)

    def transform(self, xi):
        """
        Continuous Fourier transform of the kernel at frequency `xi` (cycles per cell)
        """
        z = np.sqrt(self.beta**2 - (np.pi*self.width*np.asarray(xi, dtype=np.float64))**2 + 0j)
        # sinh(z)/z, which turns into sin for z imaginary
        z = np.where(np.abs(z) < 1e-12, 1e-12, z)
        return (self.width * np.sinh(z) / z).real


def pixel_grid(n):
    """ centred integer grid {-n/2, ..., n/2 - 1} """
    return np.arange(n) - n//2


def _check_coords(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != 2:
        raise ShapeMismatchError("coordinates must end in a (kx, ky) axis, got %s" % (coords.shape,))
    if not np.all(np.isfinite(coords)) or np.any(np.abs(coords) > 0.5):
        raise ValueError("k-space coordinates must lie in [-0.5, 0.5]")
    return coords


class NufftOperator:
    """
    The sampling operator for one frame's trajectory.

    :coords: [..., 2] k-space locations, typically [n_shots][m][2]
    :shape: (H, W) of the image grid
    :kernel: GriddingKernel for the fast path, None for the exact path

    Per-coordinate tables (phase matrix or interpolation plan) are built
    lazily and reused across every image passed through the operator.

    functions
    :forward: image (or stack of images [..., H, W]) to samples
    :adjoint: samples to image
    :grad_wrt_coords: derivative of a real loss through `forward` w.r.t. `coords`
    """
    def __init__(self, coords, shape, kernel=None):
        self.coords = _check_coords(coords)
        self.sample_shape = self.coords.shape[:-1]
        self.flat = self.coords.reshape(-1, 2)
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) != 2 or min(self.shape) < 1:
            raise ValueError("image shape must be (H, W), got %s" % (shape,))
        self.kernel = kernel
        self.u = pixel_grid(self.shape[0]).astype(np.float64)
        self.v = pixel_grid(self.shape[1]).astype(np.float64)

    @property
    def n_samples(self):
        return self.flat.shape[0]

    def _check_image(self, img):
        img = np.asarray(img)
        if img.shape[-2:] != self.shape:
            raise ShapeMismatchError("image shape %s does not match operator %s" % (img.shape[-2:], self.shape))
        return img

    def _check_samples(self, samples):
        samples = np.asarray(samples)
        n = len(self.sample_shape)
        if samples.shape[samples.ndim-n:] != self.sample_shape:
            raise ShapeMismatchError("samples %s do not match trajectory %s" % (samples.shape, self.sample_shape))
        return samples

    """
    Exact path

    """

    def _phase_rows(self, rows):
        """ exp(-2 pi i k.p) for a block of samples, [rows, H*W] """
        k = self.flat[rows]
        phase = k[:, 0, None, None]*self.u[None, :, None] + k[:, 1, None, None]*self.v[None, None, :]
        return np.exp(-2j*np.pi*phase).reshape(len(k), -1)

    @cached_property
    def phase_matrix(self):
        """ the full [M, H*W] matrix, kept when small enough to cache """
        return self._phase_rows(slice(None))

    def _cacheable(self):
        return self.n_samples * self.shape[0] * self.shape[1] <= 4 * 2**20

    def _blocks(self):
        if self._cacheable():
            yield slice(None), self.phase_matrix
        else:
            for start in range(0, self.n_samples, DIRECT_CHUNK):
                rows = slice(start, start+DIRECT_CHUNK)
                yield rows, self._phase_rows(rows)

    def _forward_direct(self, imgs):
        # imgs [B, H*W] -> [B, M]
        out = np.empty((imgs.shape[0], self.n_samples), dtype=np.complex128)
        for rows, E in self._blocks():
            out[:, rows] = imgs @ E.T
        return out

    def _adjoint_direct(self, samples):
        # samples [B, M] -> [B, H*W]
        out = np.zeros((samples.shape[0], self.shape[0]*self.shape[1]), dtype=np.complex128)
        for rows, E in self._blocks():
            out += samples[:, rows] @ E.conj()
        return out

    """
    Gridding path

    """

    @cached_property
    def plan(self):
        """
        Interpolation plan: per-axis neighbour indices and kernel weights,
        plus the deapodization that undoes the kernel's transform.
        """
        kernel = self.kernel
        W = kernel.width
        offsets = np.arange(W)
        plan = {'grid': tuple(kernel.grid_size(n) for n in self.shape)}
        for axis, pix in ((0, self.u), (1, self.v)):
            G = plan['grid'][axis]
            t = self.flat[:, axis] * G
            nearest = np.ceil(t - W/2)[:, None] + offsets[None, :]
            plan['weight%d' % axis] = kernel(t[:, None] - nearest)
            plan['index%d' % axis] = np.mod(nearest, G).astype(np.intp)
            plan['apod%d' % axis] = kernel.transform(pix / G)
            plan['pix%d' % axis] = np.mod(pix, G).astype(np.intp)
        plan['apod'] = plan['apod0'][:, None] * plan['apod1'][None, :]
        return plan

    def _forward_fast(self, imgs):
        p = self.plan
        Gx, Gy = p['grid']
        B = imgs.shape[0]
        grid = np.zeros((B, Gx, Gy), dtype=np.complex128)
        grid[:, p['pix0'][:, None], p['pix1'][None, :]] = imgs.reshape(B, *self.shape) / p['apod']
        spectrum = sfft.fft2(grid, axes=(-2, -1))
        ix = p['index0'][:, :, None]
        iy = p['index1'][:, None, :]
        weights = p['weight0'][:, :, None] * p['weight1'][:, None, :]
        # [B, M, W, W] gathered neighbourhoods
        return np.einsum('mab,nmab->nm', weights, spectrum[:, ix, iy])

    def _adjoint_fast(self, samples):
        p = self.plan
        Gx, Gy = p['grid']
        B = samples.shape[0]
        flat = (p['index0'][:, :, None]*Gy + p['index1'][:, None, :]).ravel()
        weights = p['weight0'][:, :, None] * p['weight1'][:, None, :]
        out = np.empty((B, self.shape[0]*self.shape[1]), dtype=np.complex128)
        for b in range(B):
            spread = (samples[b][:, None, None] * weights).ravel()
            grid = np.bincount(flat, weights=spread.real, minlength=Gx*Gy) \
                + 1j*np.bincount(flat, weights=spread.imag, minlength=Gx*Gy)
            # conjugate transpose of the unnormalized DFT
            image = sfft.ifft2(grid.reshape(Gx, Gy)) * (Gx*Gy)
            image = image[p['pix0'][:, None], p['pix1'][None, :]] / p['apod']
            out[b] = image.ravel()
        return out

    """
    Public operators

    """

    def forward(self, img):
        """ image(s) [..., H, W] -> samples [..., *sample_shape] """
        img = self._check_image(img)
        lead = img.shape[:-2]
        flat = img.reshape(-1, self.shape[0]*self.shape[1]).astype(np.complex128)
        out = self._forward_direct(flat) if self.kernel is None else self._forward_fast(flat)
        return out.reshape(*lead, *self.sample_shape)

    def adjoint(self, samples):
        """ samples [..., *sample_shape] -> image(s) [..., H, W] """
        samples = self._check_samples(samples)
        lead = samples.shape[:samples.ndim-len(self.sample_shape)]
        flat = samples.reshape(-1, self.n_samples).astype(np.complex128)
        out = self._adjoint_direct(flat) if self.kernel is None else self._adjoint_fast(flat)
        return out.reshape(*lead, *self.shape)

    def grad_wrt_coords(self, img, upstream):
        """
        Real gradient of a loss L w.r.t. the sample coordinates, given
        `upstream` = dL/dRe(X) + i dL/dIm(X) for X = forward(img).

        dX/dkx = -2 pi i F(u img), so two extra forward calls on the
        coordinate-weighted images give both components.

        :returns: [..., *sample_shape, 2], summed over any leading image axes
        """
        img = self._check_image(img)
        upstream = self._check_samples(upstream)
        weighted = np.stack([img * self.u[:, None], img * self.v[None, :]])
        dX = -2j*np.pi*self.forward(weighted)
        grad = np.real(np.conj(upstream)[None] * dX)
        # [2, lead..., samples] -> sum leading image axes, then move (kx, ky) last
        lead = grad.ndim - 1 - len(self.sample_shape)
        if lead:
            grad = grad.sum(axis=tuple(range(1, 1+lead)))
        return np.moveaxis(grad, 0, -1)


"""
Function interface

"""

def forward_direct(img, frame_coords):
    """ Exact evaluation of the samples at `frame_coords` [..., 2] """
    img = np.asarray(img)
    return NufftOperator(frame_coords, img.shape[-2:]).forward(img)


def forward_fast(img, frame_coords, kernel=None):
    """ Gridded approximation of forward_direct """
    img = np.asarray(img)
    return NufftOperator(frame_coords, img.shape[-2:], kernel or GriddingKernel()).forward(img)


def adjoint(samples, frame_coords, out_shape, kernel=None):
    """ Exact adjoint of forward_direct, or of forward_fast when a `kernel` is given """
    return NufftOperator(frame_coords, out_shape, kernel).adjoint(samples)


def adjoint_fast(samples, frame_coords, out_shape, kernel=None):
    return adjoint(samples, frame_coords, out_shape, kernel or GriddingKernel())


def grad_wrt_coords(img, frame_coords, upstream, kernel=None):
    img = np.asarray(img)
    return NufftOperator(frame_coords, img.shape[-2:], kernel).grad_wrt_coords(img, upstream)


def dump_samples_csv(samples, frame_coords, path):
    """ Debug dump of one frame's samples as (shot, sample, kx, ky, re, im) rows """
    import pandas as pd
    coords = _check_coords(frame_coords)
    samples = np.asarray(samples)
    if samples.shape != coords.shape[:-1] or samples.ndim != 2:
        raise ShapeMismatchError("samples %s do not match coordinates %s" % (samples.shape, coords.shape))
    shot, sample = np.meshgrid(np.arange(samples.shape[0]), np.arange(samples.shape[1]), indexing='ij')
    df = pd.DataFrame({
        'shot': shot.ravel(),
        'sample': sample.ravel(),
        'kx': coords[..., 0].ravel(),
        'ky': coords[..., 1].ravel(),
        're': samples.real.ravel(),
        'im': samples.imag.ravel(),
    })
    df.to_csv(path, index=False)
    return df

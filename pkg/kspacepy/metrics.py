"""
Image quality metrics on magnitude frames: PSNR, pixel domain visual
information fidelity and feature similarity (FSIM).
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage, stats
from skimage.metrics import mean_squared_error, peak_signal_noise_ratio

from .errors import ShapeMismatchError


logger = logging.getLogger(__name__)

PSNR_CAP = 100.0
METRICS = ('psnr', 'vif', 'fsim')

# VIF
VIF_SCALES = 4
VIF_NOISE_VAR = 2.0
VIF_EPS = 1e-10

# FSIM filter bank and similarity constants
FSIM_SCALES = 4
FSIM_ORIENTATIONS = 4
FSIM_WAVELENGTH = 6.0
FSIM_FACTOR = 2.0
FSIM_SIGMA_F = 0.5978
FSIM_SIGMA_THETA = 0.6545
FSIM_K = 2.0
FSIM_RESCALE = 1.7
FSIM_T1 = 0.85
FSIM_T2 = 160 / 255**2
SCHARR = np.array([[3., 0., -3.], [10., 0., -10.], [3., 0., -3.]]) / 16


def _pair(ref, test):
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeMismatchError("images differ in shape, %s vs %s" % (ref.shape, test.shape))
    return ref, test


def psnr(ref, test, data_range=1.0):
    """
    10 log10(data_range^2 / MSE) in dB, capped at 100 dB (also for MSE = 0)
    """
    ref, test = _pair(ref, test)
    if data_range <= 0:
        raise ValueError("data_range must be positive, got %s" % data_range)
    if mean_squared_error(ref, test) == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, peak_signal_noise_ratio(ref, test, data_range=data_range)))


def vif(ref, test, data_range=1.0):
    """
    Pixel domain visual information fidelity over a 4 scale Gaussian pyramid.

    A constant reference carries no information, it scores 1 against
    an identical test image and 0 otherwise.
    """
    ref, test = _pair(ref, test)
    if ref.ndim != 2:
        raise ShapeMismatchError("vif expects a single grayscale image, got %s" % (ref.shape,))
    if ref.max() == ref.min():
        return 1.0 if np.array_equal(ref, test) else 0.0

    # statistics are calibrated on 8 bit intensities
    ref = ref*(255/data_range)
    test = test*(255/data_range)
    num = den = 0.0
    for scale in range(1, VIF_SCALES + 1):
        sd = (2**(VIF_SCALES - scale + 1) + 1)/5.0
        if scale > 1:
            ref = ndimage.gaussian_filter(ref, sd)[::2, ::2]
            test = ndimage.gaussian_filter(test, sd)[::2, ::2]

        mu1 = ndimage.gaussian_filter(ref, sd)
        mu2 = ndimage.gaussian_filter(test, sd)
        s1 = np.maximum(ndimage.gaussian_filter(ref*ref, sd) - mu1**2, 0.0)
        s2 = np.maximum(ndimage.gaussian_filter(test*test, sd) - mu2**2, 0.0)
        s12 = ndimage.gaussian_filter(ref*test, sd) - mu1*mu2

        g = s12/(s1 + VIF_EPS)
        sv = s2 - g*s12

        flat = s1 < VIF_EPS
        g[flat] = 0
        sv[flat] = s2[flat]
        s1[flat] = 0

        blank = s2 < VIF_EPS
        g[blank] = 0
        sv[blank] = 0

        negative = g < 0
        sv[negative] = s2[negative]
        g[negative] = 0
        sv = np.maximum(sv, VIF_EPS)

        num += np.sum(np.log10(1 + g**2*s1/(sv + VIF_NOISE_VAR)))
        den += np.sum(np.log10(1 + s1/VIF_NOISE_VAR))
    return float(num/den) if den > 0 else 1.0


"""
FSIM

"""

def _filter_grid(shape):
    """ radius and angle of every FFT frequency of an image """
    u = sfft.fftfreq(shape[0])[:, None]
    v = sfft.fftfreq(shape[1])[None, :]
    r = np.sqrt(u**2 + v**2)
    theta = np.arctan2(-u, v)
    return r, theta


def pc_filters(shape, scales=FSIM_SCALES, orientations=FSIM_ORIENTATIONS):
    """ log-Gabor filter bank [scales, orientations, H, W] in the frequency domain """
    r, theta = _filter_grid(shape)
    lowpass = 1/(1 + (r/0.45)**30)

    safe = np.where(r > 0, r, 1.0)
    radial = []
    for i in range(scales):
        f0 = 1/(FSIM_WAVELENGTH*FSIM_FACTOR**i)
        lg = np.exp(-np.log(safe/f0)**2/(2*FSIM_SIGMA_F**2))
        lg[r == 0] = 0.0
        radial.append(lg)
    radial = np.stack(radial)

    theta_j = (np.pi*np.arange(orientations)/orientations)[:, None, None]
    # angular distance in the sine/cosine domain avoids wrap around
    dsin = np.sin(theta)*np.cos(theta_j) - np.cos(theta)*np.sin(theta_j)
    dcos = np.cos(theta)*np.cos(theta_j) + np.sin(theta)*np.sin(theta_j)
    angular = np.exp(-np.arctan2(dsin, dcos)**2/(2*FSIM_SIGMA_THETA**2))

    return lowpass*radial[:, None]*angular[None, :]


def phase_congruency(img, filters, data_range=1.0, eps=1e-8):
    """ phase congruency map of a grayscale image, with a noise threshold per orientation """
    img = np.asarray(img, dtype=np.float64)*(255/data_range)
    spatial = sfft.ifft2(filters).real
    eo = sfft.ifft2(sfft.fft2(img)[None, None]*filters)

    A = np.abs(eo)
    expect_A2 = np.median(A[0]**2, axis=(-2, -1))/np.log(2)
    expect_M2 = np.mean(filters[0]**2, axis=(-2, -1))
    expect_MiMj = np.einsum('iohw,johw->o', spatial, spatial)
    expect_E2 = expect_A2*expect_MiMj/expect_M2

    sigma_g = np.sqrt(expect_E2)
    mu_r = sigma_g*np.sqrt(np.pi/2)
    sigma_r = sigma_g*np.sqrt(2 - np.pi/2)
    T = ((mu_r + FSIM_K*sigma_r)/FSIM_RESCALE)[:, None, None]

    fh = eo.sum(axis=0)
    fh = fh/(np.abs(fh) + eps)
    dot = eo.real*fh.real + eo.imag*fh.imag
    cross = eo.real*fh.imag - eo.imag*fh.real
    energy = (dot - np.abs(cross)).sum(axis=0)

    return np.maximum(energy - T, 0.0).sum(axis=0)/(A.sum(axis=(0, 1)) + eps)


def _gradient_magnitude(img):
    gx = ndimage.correlate(img, SCHARR, mode='constant')
    gy = ndimage.correlate(img, SCHARR.T, mode='constant')
    return np.sqrt(gx**2 + gy**2)


def fsim(ref, test, data_range=1.0):
    """
    Feature similarity of two grayscale images: phase congruency and
    gradient magnitude similarities pooled with the larger phase congruency.
    """
    ref, test = _pair(ref, test)
    if ref.ndim != 2:
        raise ShapeMismatchError("fsim expects a single grayscale image, got %s" % (ref.shape,))
    filters = pc_filters(ref.shape)
    pc_x = phase_congruency(ref, filters, data_range)
    pc_y = phase_congruency(test, filters, data_range)

    pc_m = np.maximum(pc_x, pc_y)
    s_pc = (2*pc_x*pc_y + FSIM_T1)/(pc_x**2 + pc_y**2 + FSIM_T1)
    t2 = FSIM_T2*data_range**2
    g_x = _gradient_magnitude(ref)
    g_y = _gradient_magnitude(test)
    s_g = (2*g_x*g_y + t2)/(g_x**2 + g_y**2 + t2)
    s_l = s_pc*s_g

    if pc_m.sum() <= 0:
        # no phase structure anywhere, fall back to uniform pooling
        return float(s_l.mean())
    return float((s_l*pc_m).sum()/pc_m.sum())


"""
Reports

"""

def evaluate_sequence(ref, test, data_range=1.0):
    """
    Per-frame metrics of a reconstructed magnitude sequence against the truth.

    :ref: [n_frames][H][W] ground truth magnitudes
    :test: reconstruction of the same shape
    :returns: dict of metric -> list over frames
    """
    ref, test = _pair(ref, test)
    if ref.ndim != 3:
        raise ShapeMismatchError("sequences must be [n_frames][H][W], got %s" % (ref.shape,))
    return {
        'psnr': [psnr(r, t, data_range) for r, t in zip(ref, test)],
        'vif': [vif(r, t, data_range) for r, t in zip(ref, test)],
        'fsim': [fsim(r, t, data_range) for r, t in zip(ref, test)],
    }


def _sem(values):
    values = np.asarray(values, dtype=np.float64)
    return float(stats.sem(values)) if len(values) > 1 else 0.0


@dataclass
class MetricsReport:
    """
    Per-sample, per-frame metric values of one evaluated split.

    :rows: list of dicts (sample, frame, psnr, vif, fsim)
    """
    rows: list = field(default_factory=list)

    @classmethod
    def from_sequences(cls, refs, tests, data_range=1.0, workers=1):
        if len(refs) == 0:
            raise ValueError("cannot evaluate an empty split")
        if len(refs) != len(tests):
            raise ShapeMismatchError("%s references for %s reconstructions" % (len(refs), len(tests)))
        jobs = list(zip(refs, tests))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda p: evaluate_sequence(*p, data_range=data_range), jobs))
        else:
            results = [evaluate_sequence(r, t, data_range) for r, t in jobs]
        rows = []
        for i, res in enumerate(results):
            for f in range(len(res['psnr'])):
                rows.append({'sample': i, 'frame': f, **{m: res[m][f] for m in METRICS}})
        return cls(rows)

    def values(self, metric):
        """ per-sample values, each the mean over that sample's frames """
        per_sample = {}
        for row in self.rows:
            per_sample.setdefault(row['sample'], []).append(row[metric])
        return [float(np.mean(v)) for _, v in sorted(per_sample.items())]

    def aggregate(self):
        """ metric -> (mean, standard error) over samples """
        out = {}
        for m in METRICS:
            v = self.values(m)
            out[m] = (float(np.mean(v)), _sem(v))
        return out

    def to_dict(self):
        return {m: {'mean': mean, 'sem': sem} for m, (mean, sem) in self.aggregate().items()}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def dataframe(self):
        import pandas as pd
        return pd.DataFrame(self.rows, columns=['sample', 'frame'] + list(METRICS))

    def __repr__(self):
        agg = self.aggregate()
        return "MetricsReport(%s)" % ", ".join("%s=%.4f+-%.4f" % (m, *agg[m]) for m in METRICS)

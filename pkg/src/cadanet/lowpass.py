"""Low-pass filters applied before stride-2 subsampling, and spectra tools.

All downsampling filters preserve channel count and spatial size; the
subsampling itself happens in the stage that follows.  The FFT filters
zero every frequency bin at or above half the sampling rate per axis
(implicit periodic boundary, no window).  The spatial filters are small
depthwise kernels; the trainable one starts from the binomial kernel so
training begins from a valid low-pass.
"""

from math import comb

import numpy as np

from . import ops
from .canet import ContextAttentionFilter, MultiHeadDwConv
from .errors import ConfigurationError
from .layers import Layer


def halfband_mask(h, w, geometry="square"):
    """Boolean pass mask on DFT bins: True where the bin survives.

    square: |f_y| < pi/2 and |f_x| < pi/2.  disc: the elliptical analogue
    (normalised radius < 1/4).  Comparisons are integer-exact so boundary
    bins (e.g. n/4) are removed, Nyquist included.
    """
    ky = np.fft.fftfreq(h, d=1.0 / h).astype(np.int64)
    kx = np.fft.fftfreq(w, d=1.0 / w).astype(np.int64)
    if geometry == "square":
        pass_y = 4 * np.abs(ky) < h
        pass_x = 4 * np.abs(kx) < w
        return pass_y[:, None] & pass_x[None, :]
    if geometry == "disc":
        yy = (4 * ky[:, None] * w) ** 2
        xx = (4 * kx[None, :] * h) ** 2
        return yy + xx < (h * w) ** 2
    raise ConfigurationError(f"unknown mask geometry {geometry!r}")


def masked_lowpass(x, geometry="square"):
    """Zero all DFT bins outside the half-band pass region; trailing two
    axes are the spatial ones."""
    h, w = x.shape[-2:]
    mask = halfband_mask(h, w, geometry)
    return np.fft.ifft2(np.fft.fft2(x) * mask).real.astype(x.dtype, copy=False)


def ideal_lowpass(x, geometry="square"):
    return masked_lowpass(x, geometry)


def box_lowpass(x, geometry="square"):
    return masked_lowpass(x, geometry)


def binomial_kernel(k):
    """1-D binomial smoothing kernel of length k, normalised to sum 1."""
    row = np.array([comb(k - 1, i) for i in range(k)], dtype=np.float64)
    return row / row.sum()


def binomial3_weight(dtype=np.float64):
    row = binomial_kernel(3)
    return np.outer(row, row).astype(dtype)


def binomial3(x):
    """Depthwise 3x3 binomial smoothing, zero pad 1, stride 1."""
    n, c = x.shape[:2]
    w = np.broadcast_to(binomial3_weight(x.dtype), (c, 1, 3, 3)).copy()
    return ops.conv2d(x, w, None, stride=1, padding=1, groups=c)


def spectrum(kernel, grid=64):
    """DC-centered magnitude spectrum of a small kernel on a grid.

    Zero-pads the kernel into a grid x grid frame, takes the DFT
    magnitude, shifts DC to the center, and scales the peak to 1.
    Returns (magnitude, degenerate); an all-zero kernel is flagged
    degenerate and returned as zeros, unnormalised.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if grid < max(kh, kw):
        raise ConfigurationError(f"grid {grid} smaller than kernel {kernel.shape}")
    frame = np.zeros((grid, grid))
    frame[:kh, :kw] = kernel
    mag = np.abs(np.fft.fft2(frame))
    peak = mag.max()
    if peak == 0.0:
        return np.fft.fftshift(mag), True
    return np.fft.fftshift(mag / peak), False


def band_energy_above_cutoff(x, geometry="square"):
    """Fraction of spectral energy in the removed band, trailing axes."""
    h, w = x.shape[-2:]
    mask = halfband_mask(h, w, geometry)
    spec = np.abs(np.fft.fft2(x)) ** 2
    total = spec.sum()
    if total == 0.0:
        return 0.0
    return float(spec[..., ~mask].sum() / total)


def subsample2(x):
    """Keep every second row/column (top-left phase)."""
    return x[..., ::2, ::2]


def upsample2_zero(x):
    """Zero-insertion upsampling by 2 on the trailing axes."""
    h, w = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (2 * h, 2 * w), dtype=x.dtype)
    out[..., ::2, ::2] = x
    return out


class FftLowPass(Layer):
    """Ideal/box half-band filter as a layer.  The operator is a circular
    convolution with a real even kernel, hence self-adjoint: backward
    applies the same mask to the gradient."""

    def __init__(self, geometry="square"):
        super().__init__()
        self.geometry = geometry

    def forward(self, x, train=False):
        return masked_lowpass(x, self.geometry)

    def backward(self, grad_out):
        return masked_lowpass(grad_out, self.geometry)


class Binomial3Filter(Layer):
    """Fixed depthwise binomial smoothing (non-trainable)."""

    def forward(self, x, train=False):
        self._x = x
        return binomial3(x)

    def backward(self, grad_out):
        c = grad_out.shape[1]
        w = np.broadcast_to(binomial3_weight(grad_out.dtype),
                            (c, 1, 3, 3)).copy()
        gx, _, _ = ops.conv2d_backward(grad_out, self._x, w, 1, 1, c)
        return gx


class SameAvgPool(Layer):
    """k x k moving average at stride 1, output size preserved.

    Zero padding of k//2 per side counts toward the divisor.  For even k
    that yields one extra trailing row/column, which is cropped.
    """

    def __init__(self, k):
        super().__init__()
        if k not in (2, 3, 5):
            raise ConfigurationError(f"averaging filter size {k} not in (2, 3, 5)")
        self.k = k
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        out = ops.avg_pool(x, self.k, 1, self.k // 2)
        h, w = x.shape[2:]
        return np.ascontiguousarray(out[:, :, :h, :w])

    def backward(self, grad_out):
        h, w = self._x.shape[2:]
        ho, wo = ops.conv_out_hw((h, w), self.k, 1, self.k // 2)
        if (ho, wo) != (h, w):
            g = np.zeros(grad_out.shape[:2] + (ho, wo), dtype=grad_out.dtype)
            g[:, :, :h, :w] = grad_out
        else:
            g = grad_out
        return ops.avg_pool_backward(g, self._x, self.k, 1, self.k // 2)


def make_downsampling_filter(kind, width, k=None, head_channels=None,
                             bases=8, ca_kernel=3, geometry="square",
                             rng=None, dtype=np.float32):
    """Build one pre-subsampling filter layer.

    kind in {ideal, box, binomial3, avgpool, dwconv, cadasp}.  ``k`` is
    the window/kernel size where applicable.  The trainable depthwise
    filter starts from the binomial kernel; the aggregation-based filter
    defaults to a single head with 3x3 context and aggregation kernels.
    """
    if kind == "ideal":
        return FftLowPass(geometry)
    if kind == "box":
        return FftLowPass(geometry)
    if kind == "binomial3":
        return Binomial3Filter()
    if kind == "avgpool":
        return SameAvgPool(k or 2)
    if kind == "dwconv":
        k = k or 3
        hc = head_channels or 1
        row = binomial_kernel(k)
        return MultiHeadDwConv(width, hc, k, stride=1, bias=False, rng=rng,
                               dtype=dtype, init_weight=np.outer(row, row))
    if kind == "cadasp":
        k = k or 3
        hc = head_channels or width
        return ContextAttentionFilter(width, hc, bases, ca_kernel, k,
                                      stride=1, shared=True,
                                      pos_encoding=True, rng=rng, dtype=dtype)
    raise ConfigurationError(f"unknown downsampling filter kind {kind!r}")

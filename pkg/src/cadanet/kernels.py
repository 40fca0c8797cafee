"""Aggregation kernel dispatch: compiled extension or numpy fallback.

The per-location filter application is the one loop nest that cannot be
handed to BLAS, so it has two interchangeable implementations: a Cython
extension (`_aggcy`) and a pure-numpy twin below.  The extension is used
when it imported cleanly and ``CADA_PURE_PYTHON`` is unset; both accept
float32 and float64.  `benchmarks/bench_aggregation.py` compares them.
"""

import os

import numpy as np

from . import ops
from .errors import ConfigurationError

try:
    from . import _aggcy
except ImportError:
    _aggcy = None

_FORCE_NUMPY = bool(os.environ.get("CADA_PURE_PYTHON"))


def backend():
    """Name of the active aggregation backend: 'cython' or 'numpy'."""
    return "cython" if (_aggcy is not None and not _FORCE_NUMPY) else "numpy"


def _agg_geometry(x, maps, head_channels):
    n, c, h, w = x.shape
    if head_channels < 1 or c % head_channels:
        raise ConfigurationError(
            f"head_channels={head_channels} must divide C={c}"
        )
    heads = c // head_channels
    if maps.shape[0] != n or maps.shape[1] % heads:
        raise ConfigurationError(
            f"maps shape {maps.shape} does not match {heads} heads, batch {n}"
        )
    gg = maps.shape[1] // heads
    g = int(round(gg ** 0.5))
    if g * g != gg:
        raise ConfigurationError(f"maps channel count {maps.shape[1]} is not heads*G*G")
    if g % 2 == 0:
        raise ConfigurationError(f"aggregation kernel size G={g} must be odd")
    return heads, g


def aggregate(x, maps, head_channels, stride=1, backend_name=None):
    """Apply per-location G x G filters to x.

    x (N, C, H, W); maps (N, heads*G*G, H_out, W_out) where channel
    h*G*G + i*G + j holds kernel tap (i, j) for head h; consecutive blocks
    of ``head_channels`` input channels share a head's filters.  Zero
    padding is fixed at G//2.
    """
    heads, g = _agg_geometry(x, maps, head_channels)
    xp = ops.pad2d(x, g // 2)
    h_out, w_out = maps.shape[2:]
    expect = ops.conv_out_hw(x.shape[2:], g, stride, g // 2)
    if (h_out, w_out) != expect:
        raise ConfigurationError(
            f"maps spatial size {(h_out, w_out)} does not match aggregation "
            f"output {expect}"
        )
    use = backend_name or backend()
    if use == "cython":
        out = np.empty((x.shape[0], x.shape[1], h_out, w_out), dtype=x.dtype)
        _aggcy.agg_forward(np.ascontiguousarray(xp),
                           np.ascontiguousarray(maps),
                           head_channels, stride, g, out)
        return out
    return _aggregate_np(xp, maps, head_channels, stride, g, h_out, w_out)


def aggregate_backward(grad_out, x, maps, head_channels, stride=1,
                       backend_name=None):
    """Gradients of aggregate.  Returns (grad_x, grad_maps)."""
    heads, g = _agg_geometry(x, maps, head_channels)
    pad = g // 2
    xp = ops.pad2d(x, pad)
    use = backend_name or backend()
    if use == "cython":
        go = np.ascontiguousarray(grad_out)
        grad_xp = np.zeros_like(xp)
        grad_maps = np.zeros_like(maps)
        _aggcy.agg_backward_input(go, np.ascontiguousarray(maps),
                                  head_channels, stride, g, grad_xp)
        _aggcy.agg_backward_maps(go, np.ascontiguousarray(xp),
                                 head_channels, stride, g, grad_maps)
    else:
        grad_xp, grad_maps = _aggregate_backward_np(
            grad_out, xp, maps, head_channels, stride, g)
    if pad:
        h, w = x.shape[2:]
        grad_x = grad_xp[:, :, pad:pad + h, pad:pad + w].copy()
    else:
        grad_x = grad_xp
    return grad_x, grad_maps


def _aggregate_np(xp, maps, head_channels, stride, g, h_out, w_out):
    n, c = xp.shape[:2]
    heads = c // head_channels
    cols, _, _ = ops.unfold(xp, g, g, stride)
    cols = cols.reshape(n, heads, head_channels, g, g, h_out, w_out)
    m6 = maps.reshape(n, heads, g, g, h_out, w_out)
    out = np.einsum("nhijyx,nhcijyx->nhcyx", m6, cols, optimize=True)
    return out.reshape(n, c, h_out, w_out)


def _aggregate_backward_np(grad_out, xp, maps, head_channels, stride, g):
    n, c = xp.shape[:2]
    heads = c // head_channels
    h_out, w_out = maps.shape[2:]
    cols, _, _ = ops.unfold(xp, g, g, stride)
    cols = cols.reshape(n, heads, head_channels, g, g, h_out, w_out)
    go6 = grad_out.reshape(n, heads, head_channels, h_out, w_out)
    grad_maps = np.einsum("nhcyx,nhcijyx->nhijyx", go6, cols, optimize=True)
    grad_maps = grad_maps.reshape(maps.shape)

    m6 = maps.reshape(n, heads, g, g, h_out, w_out)
    grad_xp = np.zeros_like(xp)
    for i in range(g):
        for j in range(g):
            contrib = go6 * m6[:, :, None, i, j]
            grad_xp[:, :, i:i + stride * h_out:stride,
                    j:j + stride * w_out:stride] += contrib.reshape(
                        n, c, h_out, w_out)
    return grad_xp, grad_maps

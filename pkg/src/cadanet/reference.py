"""Naive loop reference implementations.

Deliberately slow, index-at-a-time versions of the vectorised kernels.
They share no code with `ops` or `kernels` and exist so the fast paths can
be checked against an independent route (`cada oracle`, test suites).
Only use them on tiny shapes.
"""

import numpy as np


def conv2d_loops(x, weight, bias=None, stride=1, padding=0, groups=1):
    n, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = weight.shape
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    out_g = c_out // groups
    out = np.zeros((n, c_out, h_out, w_out), dtype=x.dtype)
    for b in range(n):
        for o in range(c_out):
            g = o // out_g
            for y in range(h_out):
                for xx in range(w_out):
                    acc = 0.0
                    for ci in range(c_in_g):
                        c = g * c_in_g + ci
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - padding
                                xj = xx * stride + j - padding
                                if 0 <= yy < h and 0 <= xj < w:
                                    acc += weight[o, ci, i, j] * x[b, c, yy, xj]
                    if bias is not None:
                        acc += bias[o]
                    out[b, o, y, xx] = acc
    return out


def aggregate_loops(x, maps, head_channels, stride=1):
    """Per-location kernel aggregation, one multiply at a time.

    maps (N, heads*G*G, H_out, W_out); channel h*G*G + i*G + j holds the
    kernel tap (i, j) for head h.  Zero padding of G//2 on the input.
    """
    n, c, h, w = x.shape
    heads = c // head_channels
    gg = maps.shape[1] // heads
    g = int(round(gg ** 0.5))
    pad = g // 2
    h_out, w_out = maps.shape[2:]
    out = np.zeros((n, c, h_out, w_out), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            hd = ch // head_channels
            for y in range(h_out):
                for xx in range(w_out):
                    acc = 0.0
                    for i in range(g):
                        for j in range(g):
                            yy = y * stride + i - pad
                            xj = xx * stride + j - pad
                            if 0 <= yy < h and 0 <= xj < w:
                                acc += maps[b, hd * gg + i * g + j, y, xx] \
                                    * x[b, ch, yy, xj]
                    out[b, ch, y, xx] = acc
    return out


def construct_maps_loops(alpha, base, pos, pos_enabled=True):
    """Filter maps as an explicit sum: position kernel plus mixed bases.

    alpha (N, A, B, H, W) with A either 1 (shared) or heads,
    base (heads, B, G, G), pos (heads, G, G).
    Returns (N, heads*G*G, H, W).
    """
    n, a, nb, h, w = alpha.shape
    heads, _, g, _ = base.shape
    out = np.zeros((n, heads * g * g, h, w), dtype=alpha.dtype)
    for b in range(n):
        for hd in range(heads):
            ai = hd if a == heads else 0
            for i in range(g):
                for j in range(g):
                    ch = hd * g * g + i * g + j
                    for y in range(h):
                        for xx in range(w):
                            acc = pos[hd, i, j] if pos_enabled else 0.0
                            for k in range(nb):
                                acc += alpha[b, ai, k, y, xx] * base[hd, k, i, j]
                            out[b, ch, y, xx] = acc
    return out


def dft2_loops(x):
    """Unitary 2-D DFT by direct summation. x is a 2-D array."""
    h, w = x.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for y in range(h):
                for xx in range(w):
                    ang = -2.0 * np.pi * (u * y / h + v * xx / w)
                    acc += x[y, xx] * np.exp(1j * ang)
            out[u, v] = acc
    return out / np.sqrt(h * w)

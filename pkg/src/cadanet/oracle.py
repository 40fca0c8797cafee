"""Dual-route correctness suite against the naive loop references.

The fast paths (im2col conv, einsum/compiled aggregation, map
construction) are compared on random small cases with the independent
index-at-a-time implementations in `reference`, plus the algebraic
identities the attention filter must satisfy:

  * fused filter output equals explicit maps-then-aggregate;
  * mixture coefficients forced to zero reduce the filter to a
    multi-head depthwise conv whose weight is the position kernel;
  * one-channel heads reduce multi-head depthwise conv to a plain
    grouped depthwise conv2d.

Everything runs in float64 so agreement is expected near machine
precision; the pass bar is 1e-12.
"""

import numpy as np

from . import kernels, reference
from .attention import BaseKernelBank, construct_maps, mh_dw_conv
from .canet import ContextAttentionFilter
from .layers import Conv2d
from .ops import conv2d

TOLERANCE = 1e-12


def _diff(a, b):
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _conv_cases(rng, n_cases, rows):
    worst = 0.0
    for _ in range(n_cases):
        groups = int(rng.choice([1, 2]))
        cin = groups * int(rng.integers(1, 3))
        cout = groups * int(rng.integers(1, 3))
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.choice([0, 1]))
        h = int(rng.integers(k + stride, k + stride + 3))
        x = rng.standard_normal((int(rng.integers(1, 3)), cin, h, h))
        w = rng.standard_normal((cout, cin // groups, k, k))
        b = rng.standard_normal(cout)
        fast = conv2d(x, w, b, stride=stride, padding=pad, groups=groups)
        ref = reference.conv2d_loops(x, w, b, stride=stride, padding=pad,
                                     groups=groups)
        worst = max(worst, _diff(fast, ref))
    rows.append(("conv2d vs loop reference", n_cases, worst))
    return worst


def _aggregate_cases(rng, n_cases, rows):
    worst = 0.0
    backends = [kernels.backend()]
    if "numpy" not in backends:
        backends.append("numpy")
    for _ in range(n_cases):
        hc = int(rng.choice([1, 2, 3]))
        heads = int(rng.integers(1, 4))
        g = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        h = int(rng.integers(3, 7))
        ho = (h + 2 * (g // 2) - g) // stride + 1
        x = rng.standard_normal((int(rng.integers(1, 3)), heads * hc, h, h))
        maps = rng.standard_normal((x.shape[0], heads * g * g, ho, ho))
        ref = reference.aggregate_loops(x, maps, hc, stride=stride)
        for backend in backends:
            fast = kernels.aggregate(x, maps, hc, stride=stride,
                                     backend_name=backend)
            worst = max(worst, _diff(fast, ref))
    rows.append(("aggregate vs loop reference", n_cases, worst))
    return worst


def _maps_cases(rng, n_cases, rows):
    worst = 0.0
    for _ in range(n_cases):
        heads = int(rng.integers(1, 4))
        nb = int(rng.choice([1, 2, 4]))
        g = int(rng.choice([1, 3, 5]))
        shared = bool(rng.integers(0, 2))
        pos_on = bool(rng.integers(0, 2))
        h = int(rng.integers(2, 5))
        alpha = rng.standard_normal(
            (int(rng.integers(1, 3)), 1 if shared else heads, nb, h, h))
        base = rng.standard_normal((heads, nb, g, g))
        pos = rng.standard_normal((heads, g, g))
        bank = BaseKernelBank(base, pos, pos_enabled=pos_on)
        fast = construct_maps(alpha, bank)
        ref = reference.construct_maps_loops(alpha, base, pos,
                                             pos_enabled=pos_on)
        worst = max(worst, _diff(fast, ref))
    rows.append(("construct_maps vs loop reference", n_cases, worst))
    return worst


def _fused_vs_explicit(rng, rows):
    """Filter forward vs maps rebuilt by loops and aggregated by loops."""
    worst = 0.0
    n = 0
    for hc, nb, t, g in ((1, 1, 1, 3), (2, 2, 3, 3), (4, 4, 3, 5),
                         (2, 4, 1, 5), (4, 1, 3, 3), (1, 2, 3, 5)):
        for stride in (1, 2):
            width = 4 * hc
            filt = ContextAttentionFilter(
                width, hc, nb, t, g, stride=stride,
                shared=bool(rng.integers(0, 2)),
                rng=np.random.default_rng(int(rng.integers(0, 2 ** 31))),
                dtype=np.float64)
            x = rng.standard_normal((2, width, 6, 6))
            y = filt.forward(x, train=False)
            bank = filt.net.bank()
            maps = reference.construct_maps_loops(
                filt.net.alpha(), bank.base, bank.pos, bank.pos_enabled)
            y_ref = reference.aggregate_loops(x, maps, hc, stride=stride)
            worst = max(worst, _diff(y, y_ref))
            n += 1
    rows.append(("fused filter vs explicit sum", n, worst))
    return worst


def _alpha_zero_is_dw(rng, rows):
    """With the context branch silenced the maps collapse to the position
    kernel, i.e. a multi-head depthwise conv with weight = pos."""
    worst = 0.0
    n = 0
    for hc, g in ((2, 3), (4, 5), (1, 3), (8, 7)):
        width = 2 * hc
        filt = ContextAttentionFilter(
            width, hc, 3, 3, g, stride=1,
            rng=np.random.default_rng(int(rng.integers(0, 2 ** 31))),
            dtype=np.float64)
        filt.net.conv_ctx.weight.data[:] = 0.0
        filt.net.bn.shift.data[:] = -1.0      # ReLU kills the branch
        x = rng.standard_normal((2, width, 5, 5))
        y = filt.forward(x, train=False)
        assert _diff(filt.net.alpha(), np.zeros(1)) == 0.0
        pos = filt.net.bank().pos
        y_dw = mh_dw_conv(x, pos, None, hc, stride=1)
        worst = max(worst, _diff(y, y_dw))
        n += 1
    rows.append(("alpha=0 filter vs depthwise(pos)", n, worst))
    return worst


def _single_channel_heads(rng, rows):
    """C_h = 1 multi-head depthwise conv is plain depthwise conv2d."""
    worst = 0.0
    n = 0
    for width, g, stride in ((3, 3, 1), (4, 5, 2), (6, 3, 2), (2, 7, 1)):
        w = rng.standard_normal((width, g, g))
        b = rng.standard_normal(width)
        x = rng.standard_normal((2, width, 6, 6))
        y = mh_dw_conv(x, w, b, head_channels=1, stride=stride)
        conv = Conv2d(width, width, g, stride=stride, padding=g // 2,
                      groups=width, bias=True, dtype=np.float64)
        conv.weight.data[:] = w[:, None]
        conv.bias.data[:] = b
        y_ref = conv.forward(x, train=False)
        worst = max(worst, _diff(y, y_ref))
        n += 1
    rows.append(("1-channel heads vs grouped conv", n, worst))
    return worst


def run_suite(seed=0, cases=120, verbose=False):
    """Returns (max_abs_err, total_cases, rows).  rows are
    (description, n_cases, worst_abs_err) triples."""
    rng = np.random.default_rng(seed)
    rows = []
    per = max(34, cases // 3)
    worst = 0.0
    worst = max(worst, _conv_cases(rng, per, rows))
    worst = max(worst, _aggregate_cases(rng, per, rows))
    worst = max(worst, _maps_cases(rng, per, rows))
    worst = max(worst, _fused_vs_explicit(rng, rows))
    worst = max(worst, _alpha_zero_is_dw(rng, rows))
    worst = max(worst, _single_channel_heads(rng, rows))
    total = sum(r[1] for r in rows)
    if verbose:
        for name, n, err in rows:
            print(f"  {name:<36s} cases={n:<4d} max_abs_err={err:.3e}")
    return worst, total, rows

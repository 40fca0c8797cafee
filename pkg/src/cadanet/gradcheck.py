"""Central-difference gradient checking for every layer family.

All checks run in float64 with step 1e-5 against a scalar probe loss
L = sum(R * f(x)) for a fixed random R, so analytic gradients come from
one backward call with R as the upstream gradient.  The reported error is
max|analytic - numeric| / max(1, max|numeric|).
"""

import numpy as np

from . import ops
from .attention import construct_maps, construct_maps_backward
from .canet import (ConstantAttentionFilter, ContextAttentionFilter,
                    MultiHeadDwConv)
from .kernels import aggregate, aggregate_backward
from .layers import BatchNorm2d, Conv2d, Linear


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar f at every element of x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_error(analytic, numeric):
    scale = max(1.0, float(np.abs(numeric).max()))
    return float(np.abs(analytic - numeric).max()) / scale


def check_layer(layer, x, train=True, h=1e-5, params=True):
    """FD-check a Layer's input gradient and (optionally) all params.

    Returns the max relative error across everything checked."""
    rng = np.random.default_rng(0)
    probe = rng.standard_normal(layer.forward(x, train).shape)

    def loss():
        return float((layer.forward(x, train) * probe).sum())

    layer.zero_grad()
    layer.forward(x, train)
    gx = layer.backward(probe.copy())
    errs = [rel_error(gx, numeric_grad(loss, x, h))]
    if params:
        for _, p in layer.named_params():
            errs.append(rel_error(p.grad, numeric_grad(loss, p.data, h)))
    return max(errs)


def _check_functional(fwd, bwd_grads, arrays, h=1e-5):
    """fwd() -> output; bwd_grads(probe) -> analytic grads matching
    ``arrays``.  Returns max relative error."""
    rng = np.random.default_rng(1)
    probe = rng.standard_normal(fwd().shape)

    def loss():
        return float((fwd() * probe).sum())

    grads = bwd_grads(probe)
    errs = []
    for arr, g in zip(arrays, grads):
        if g is None:
            continue
        errs.append(rel_error(g, numeric_grad(loss, arr, h)))
    return max(errs)


def run_suite(seed=0, verbose=False):
    """The full gradient battery; returns (max_err, per_check list)."""
    rng = np.random.default_rng(seed)
    results = []

    def record(name, err):
        results.append((name, err))
        if verbose:
            print(f"  {name:<44} rel_err={err:.3e}")

    # Core layers at a few shapes/strides.
    for stride in (1, 2):
        x = rng.standard_normal((2, 4, 5, 5))
        layer = Conv2d(4, 6, 3, stride=stride, padding=1, groups=2,
                       bias=True, rng=rng, dtype=np.float64)
        record(f"conv2d[s{stride}]", check_layer(layer, x))
    x = rng.standard_normal((3, 4, 4, 4))
    bn = BatchNorm2d(4, dtype=np.float64)
    bn.scale.data[:] = rng.standard_normal(4)
    bn.shift.data[:] = rng.standard_normal(4)
    record("batch_norm[train]", check_layer(bn, x, train=True))
    bn.running_mean[:] = rng.standard_normal(4)
    bn.running_var[:] = 0.5 + rng.random(4)
    record("batch_norm[eval]", check_layer(bn, x, train=False))

    x = rng.standard_normal((2, 3, 6, 6)) + 0.05
    for k, stride, pad, name in ((2, 2, 0, "max_pool[2s2]"),
                                 (3, 2, 1, "max_pool[3s2p1]")):
        def fwd():
            out, _ = ops.max_pool(x, k, stride, pad)
            return out

        def bwd(probe):
            _, arg = ops.max_pool(x, k, stride, pad)
            return [ops.max_pool_backward(probe, x, arg, k, stride, pad)]

        record(name, _check_functional(fwd, bwd, [x]))

        def fwd_a():
            return ops.avg_pool(x, k, stride, pad)

        def bwd_a(probe):
            return [ops.avg_pool_backward(probe, x, k, stride, pad)]

        record(name.replace("max", "avg"), _check_functional(fwd_a, bwd_a, [x]))

    x2 = rng.standard_normal((3, 5))
    lin = Linear(5, 4, bias=True, rng=rng, dtype=np.float64)
    record("linear", check_layer(lin, x2))

    logits = rng.standard_normal((4, 5))
    labels = rng.integers(0, 5, 4)

    def fwd_l():
        loss, _ = ops.softmax_cross_entropy(logits, labels)
        return np.array(loss)

    def bwd_l(probe):
        _, grad = ops.softmax_cross_entropy(logits.copy(), labels)
        return [float(probe) * grad]

    record("softmax_xent", _check_functional(fwd_l, bwd_l, [logits]))

    # Attention ops across the config matrix.
    width = 4
    for head_ch in (1, 2, 4):
        heads = width // head_ch
        for bases in (1, 2, 4):
            for t in (1, 3):
                for g in (3, 5):
                    for stride in (1, 2):
                        tag = f"hc{head_ch} b{bases} t{t} g{g} s{stride}"
                        _matrix_case(rng, record, tag, width, head_ch, heads,
                                     bases, t, g, stride)
    max_err = max(e for _, e in results)
    return max_err, results


def _matrix_case(rng, record, tag, width, head_ch, heads, bases, t, g,
                 stride):
    n, hw = 1, 5
    x = rng.standard_normal((n, width, hw, hw))
    out_hw = (hw - 1) // stride + 1

    # construct_maps + aggregate as raw ops.
    from .attention import BaseKernelBank
    alpha = rng.standard_normal((n, heads, bases, out_hw, out_hw))
    base = rng.standard_normal((heads, bases, g, g))
    pos = rng.standard_normal((heads, g, g))

    def fwd_m():
        bank = BaseKernelBank(base, pos, True)
        return construct_maps(alpha, bank)

    def bwd_m(probe):
        bank = BaseKernelBank(base, pos, True)
        ga, gb, gp = construct_maps_backward(probe, alpha, bank)
        return [ga, gb, gp]

    record(f"construct_maps[{tag}]",
           _check_functional(fwd_m, bwd_m, [alpha, base, pos]))

    maps = rng.standard_normal((n, heads * g * g, out_hw, out_hw))

    def fwd_a():
        return aggregate(x, maps, head_ch, stride)

    def bwd_a(probe):
        return list(aggregate_backward(probe, x, maps, head_ch, stride))

    record(f"aggregate[{tag}]", _check_functional(fwd_a, bwd_a, [x, maps]))

    # Full filter layers (context-derived and seed-derived maps).
    ctx = ContextAttentionFilter(width, head_ch, bases, t, g, stride=stride,
                                 shared=(head_ch == 2), pos_encoding=True,
                                 rng=rng, dtype=np.float64)
    ctx.net.bn.scale.data[:] = 0.5 + rng.random(ctx.net.bn.c)
    ctx.net.bn.shift.data[:] = 0.1 * rng.standard_normal(ctx.net.bn.c)
    record(f"ca_filter[{tag}]", check_layer(ctx, x.copy(), train=True))

    seed_net = ConstantAttentionFilter(width, head_ch, bases, t, g,
                                       stride=stride, shared=(head_ch == 4),
                                       pos_encoding=True, rng=rng,
                                       dtype=np.float64)
    record(f"da_filter[{tag}]", check_layer(seed_net, x.copy(), train=True))

    dw = MultiHeadDwConv(width, head_ch, g, stride=stride, bias=True,
                         rng=rng, dtype=np.float64)
    record(f"mh_dw[{tag}]", check_layer(dw, x.copy()))

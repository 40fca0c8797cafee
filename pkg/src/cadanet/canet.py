"""Networks that produce per-location filter maps, and the spatial-filter
layers that apply them inside a backbone block.

`ContextMapNet` derives mixture coefficients from the input patch around
each location: a grouped T x T convolution squeezes each head's channels
down to ``bases`` coefficient channels, then BN + ReLU, then a 1x1
convolution whose weight *is* the base-kernel bank and whose bias *is* the
position-encoding kernel.  With ``shared=True`` the coefficients are
computed once from all channels and shared across heads.

`ConstantMapNet` feeds the same pipeline from a trainable 1x1 seed patch
instead of the input, so its maps are location- and input-independent.
"""

import numpy as np

from .attention import (BaseKernelBank, aggregate, aggregate_backward,
                        mh_dw_conv, mh_dw_conv_backward)
from .errors import ConfigurationError
from .layers import BatchNorm2d, Conv2d, Layer, Param, ReLU


def _check_geometry(width, head_channels, bases, ca_kernel, agg_kernel):
    if head_channels < 1 or width % head_channels:
        raise ConfigurationError(
            f"head_channels={head_channels} must divide width={width}")
    if bases < 1:
        raise ConfigurationError("need at least one base kernel")
    if ca_kernel % 2 == 0:
        raise ConfigurationError(f"context kernel T={ca_kernel} must be odd")
    if agg_kernel % 2 == 0:
        raise ConfigurationError(f"aggregation kernel G={agg_kernel} must be odd")
    return width // head_channels


class ContextMapNet(Layer):
    def __init__(self, width, head_channels, bases, ca_kernel, agg_kernel,
                 stride=1, shared=False, pos_encoding=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        heads = _check_geometry(width, head_channels, bases, ca_kernel,
                                agg_kernel)
        self.width = width
        self.head_channels = head_channels
        self.num_heads = heads
        self.num_bases = bases
        self.ca_kernel = ca_kernel
        self.agg_kernel = agg_kernel
        self.stride = stride
        self.shared = shared
        self.pos_encoding = pos_encoding
        mix_ch = bases if shared else heads * bases
        groups = 1 if shared else heads
        self.conv_ctx = Conv2d(width, mix_ch, ca_kernel, stride=stride,
                               padding=ca_kernel // 2, groups=groups,
                               bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(mix_ch, dtype=dtype)
        self.act = ReLU()
        self.conv_mix = Conv2d(mix_ch, heads * agg_kernel * agg_kernel, 1,
                               stride=1, padding=0, groups=groups,
                               bias=pos_encoding, rng=rng, dtype=dtype)
        self._alpha_raw = None

    def bank(self):
        """Base kernels and position kernel as live views into conv_mix.

        base[h, i, :, :] is the i-th kernel of head h; pos[h] is that
        head's position-encoding kernel.  Mutating the views mutates the
        network.
        """
        g = self.agg_kernel
        w = self.conv_mix.weight.data
        base = np.moveaxis(
            w.reshape(self.num_heads, g, g, self.num_bases), 3, 1)
        if self.pos_encoding:
            pos = self.conv_mix.bias.data.reshape(self.num_heads, g, g)
        else:
            pos = np.zeros((self.num_heads, g, g), dtype=w.dtype)
        return BaseKernelBank(base, pos, pos_enabled=self.pos_encoding)

    def alpha(self):
        """Mixture coefficients from the last forward, shaped
        (N, A, bases, H_out, W_out) with A = 1 when shared else heads."""
        a = self._alpha_raw
        if a is None:
            raise RuntimeError("alpha is only available after a forward pass")
        n, _, h, w = a.shape
        heads = 1 if self.shared else self.num_heads
        return a.reshape(n, heads, self.num_bases, h, w)

    def forward(self, x, train=False):
        z = self.conv_ctx.forward(x, train)
        z = self.bn.forward(z, train)
        z = self.act.forward(z, train)
        self._alpha_raw = z
        return self.conv_mix.forward(z, train)

    def backward(self, grad_maps):
        g = self.conv_mix.backward(grad_maps)
        g = self.act.backward(g)
        g = self.bn.backward(g)
        return self.conv_ctx.backward(g)


class ConstantMapNet(Layer):
    """Maps from a trainable seed: same pipeline as ContextMapNet but the
    input is a learned 1x1 patch, so every location and every sample gets
    the same maps.

    The BN stage always normalises by its running buffers: batch
    statistics of a single 1x1 activation are degenerate (variance zero)
    and would cut the seed out of the gradient graph.
    """

    def __init__(self, width, head_channels, bases, ca_kernel, agg_kernel,
                 shared=False, pos_encoding=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        heads = _check_geometry(width, head_channels, bases, ca_kernel,
                                agg_kernel)
        self.width = width
        self.head_channels = head_channels
        self.num_heads = heads
        self.num_bases = bases
        self.agg_kernel = agg_kernel
        self.shared = shared
        self.pos_encoding = pos_encoding
        rng = rng or np.random.default_rng(0)
        self.seed = Param(rng.standard_normal((1, width, 1, 1)).astype(dtype))
        mix_ch = bases if shared else heads * bases
        groups = 1 if shared else heads
        self.conv_ctx = Conv2d(width, mix_ch, ca_kernel, stride=1,
                               padding=ca_kernel // 2, groups=groups,
                               bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(mix_ch, dtype=dtype)
        self.act = ReLU()
        self.conv_mix = Conv2d(mix_ch, heads * agg_kernel * agg_kernel, 1,
                               stride=1, padding=0, groups=groups,
                               bias=pos_encoding, rng=rng, dtype=dtype)
        self._out_hw = None
        self._alpha_cache = None

    bank = ContextMapNet.bank
    alpha = ContextMapNet.alpha

    @property
    def _alpha_raw(self):
        return self._alpha_cache

    def forward(self, batch, out_hw, train=False):
        z = self.conv_ctx.forward(self.seed.data, False)
        z = self.bn.forward(z, False)
        z = self.act.forward(z, False)
        self._alpha_cache = z
        maps1 = self.conv_mix.forward(z, False)
        self._out_hw = out_hw
        h, w = out_hw
        return np.ascontiguousarray(
            np.broadcast_to(maps1, (batch, maps1.shape[1], h, w)))

    def backward(self, grad_maps):
        g1 = grad_maps.sum(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
        g = self.conv_mix.backward(g1)
        g = self.act.backward(g)
        g = self.bn.backward(g)
        g = self.conv_ctx.backward(g)
        self.seed.grad += g
        return None

    def profile_rows(self, name, in_shape, rows):
        rows.append((name + ".seed", self.seed.data.size, 0))
        shape = (1, self.width, 1, 1)
        for cname, child in self._children.items():
            shape = child.profile_rows(f"{name}.{cname}", shape, rows)
        return shape


class ContextAttentionFilter(Layer):
    """Spatial filter stage: per-location maps from a ContextMapNet,
    applied by aggregation over the same input."""

    def __init__(self, width, head_channels, bases, ca_kernel, agg_kernel,
                 stride=1, shared=False, pos_encoding=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        self.width = width
        self.head_channels = head_channels
        self.stride = stride
        self.net = ContextMapNet(width, head_channels, bases, ca_kernel,
                                 agg_kernel, stride=stride, shared=shared,
                                 pos_encoding=pos_encoding, rng=rng,
                                 dtype=dtype)
        self._x = None
        self._maps = None

    def forward(self, x, train=False):
        maps = self.net.forward(x, train)
        self._x = x
        self._maps = maps
        return aggregate(x, maps, self.head_channels, self.stride)

    def backward(self, grad_out):
        gx_agg, gmaps = aggregate_backward(grad_out, self._x, self._maps,
                                           self.head_channels, self.stride)
        gx_net = self.net.backward(gmaps)
        return gx_agg + gx_net

    def out_shape(self, in_shape):
        g = self.net.agg_kernel
        from .ops import conv_out_hw
        ho, wo = conv_out_hw(in_shape[2:], g, self.stride, g // 2)
        return (in_shape[0], self.width, ho, wo)

    def profile_rows(self, name, in_shape, rows):
        self.net.profile_rows(name + ".net", in_shape, rows)
        out = self.out_shape(in_shape)
        g = self.net.agg_kernel
        rows.append((name + ".agg", 0, out[1] * out[2] * out[3] * g * g))
        return out


class ConstantAttentionFilter(Layer):
    """Spatial filter stage with input-independent maps from a trainable
    seed; still aggregated against the input, so the output varies."""

    def __init__(self, width, head_channels, bases, ca_kernel, agg_kernel,
                 stride=1, shared=False, pos_encoding=True, rng=None,
                 dtype=np.float32):
        super().__init__()
        self.width = width
        self.head_channels = head_channels
        self.stride = stride
        self.agg_kernel = agg_kernel
        self.net = ConstantMapNet(width, head_channels, bases, ca_kernel,
                                  agg_kernel, shared=shared,
                                  pos_encoding=pos_encoding, rng=rng,
                                  dtype=dtype)
        self._x = None
        self._maps = None

    def forward(self, x, train=False):
        from .ops import conv_out_hw
        g = self.agg_kernel
        out_hw = conv_out_hw(x.shape[2:], g, self.stride, g // 2)
        maps = self.net.forward(x.shape[0], out_hw, train)
        self._x = x
        self._maps = maps
        return aggregate(x, maps, self.head_channels, self.stride)

    def backward(self, grad_out):
        gx_agg, gmaps = aggregate_backward(grad_out, self._x, self._maps,
                                           self.head_channels, self.stride)
        self.net.backward(gmaps)
        return gx_agg

    def out_shape(self, in_shape):
        g = self.agg_kernel
        from .ops import conv_out_hw
        ho, wo = conv_out_hw(in_shape[2:], g, self.stride, g // 2)
        return (in_shape[0], self.width, ho, wo)

    def profile_rows(self, name, in_shape, rows):
        self.net.profile_rows(name + ".net", in_shape, rows)
        out = self.out_shape(in_shape)
        g = self.agg_kernel
        rows.append((name + ".agg", 0, out[1] * out[2] * out[3] * g * g))
        return out


class MultiHeadDwConv(Layer):
    """Trainable multi-head depthwise convolution (one kernel per head)."""

    def __init__(self, width, head_channels, kernel, stride=1, bias=False,
                 rng=None, dtype=np.float32, init_weight=None):
        super().__init__()
        if width % head_channels:
            raise ConfigurationError(
                f"head_channels={head_channels} must divide width={width}")
        if kernel % 2 == 0:
            raise ConfigurationError(f"kernel {kernel} must be odd")
        self.width = width
        self.head_channels = head_channels
        self.kernel = kernel
        self.stride = stride
        heads = width // head_channels
        rng = rng or np.random.default_rng(0)
        if init_weight is None:
            fan_in = head_channels * kernel * kernel
            std = np.sqrt(2.0 / fan_in)
            init_weight = (rng.standard_normal((heads, kernel, kernel))
                           * std).astype(dtype)
        else:
            init_weight = np.broadcast_to(
                np.asarray(init_weight, dtype=dtype),
                (heads, kernel, kernel)).copy()
        self.weight = Param(init_weight)
        self.bias = Param(np.zeros(heads, dtype=dtype)) if bias else None
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        b = self.bias.data if self.bias is not None else None
        return mh_dw_conv(x, self.weight.data, b, self.head_channels,
                          self.stride)

    def backward(self, grad_out):
        gx, gw, gb = mh_dw_conv_backward(
            grad_out, self._x, self.weight.data, self.head_channels,
            self.stride, with_bias=self.bias is not None)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx

    def out_shape(self, in_shape):
        from .ops import conv_out_hw
        ho, wo = conv_out_hw(in_shape[2:], self.kernel, self.stride,
                             self.kernel // 2)
        return (in_shape[0], self.width, ho, wo)

    def macs(self, in_shape):
        _, c, ho, wo = self.out_shape(in_shape)
        return c * ho * wo * self.kernel * self.kernel

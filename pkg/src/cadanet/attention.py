"""Decomposed per-location attention filters.

A spatial filter map is assembled per location as a position-encoding
kernel plus a mixture of shared base kernels, the mixture weights coming
from a context network (or a trainable seed).  `construct_maps` builds the
maps, `aggregate` (re-exported from `kernels`) applies them, and
`mh_dw_conv` is the location-constant special case where every position
shares one kernel per head.
"""

import io
import struct

import numpy as np

from . import ops
from .errors import ConfigurationError
from .kernels import aggregate, aggregate_backward

__all__ = [
    "BaseKernelBank",
    "construct_maps",
    "construct_maps_backward",
    "aggregate",
    "aggregate_backward",
    "mh_dw_conv",
    "mh_dw_conv_backward",
]


class BaseKernelBank:
    """Shared base kernels and the position-encoding kernel, per head.

    base (heads, num_bases, G, G); pos (heads, G, G).  ``pos_enabled``
    records whether the position kernel participates (and whether it is a
    trainable parameter of the owning network).  Instances built by a
    context network hold *views* into that network's parameters, so edits
    here are edits there.
    """

    def __init__(self, base, pos, pos_enabled=True):
        base = np.asarray(base)
        pos = np.asarray(pos)
        if base.ndim != 4:
            raise ConfigurationError("base kernels must be (heads, bases, G, G)")
        heads, _, g, g2 = base.shape
        if g != g2 or g % 2 == 0:
            raise ConfigurationError(f"base kernel size G={g}x{g2} must be square and odd")
        if pos.shape != (heads, g, g):
            raise ConfigurationError(
                f"pos shape {pos.shape} must be ({heads}, {g}, {g})")
        self.base = base
        self.pos = pos
        self.pos_enabled = bool(pos_enabled)

    @property
    def num_heads(self):
        return self.base.shape[0]

    @property
    def num_bases(self):
        return self.base.shape[1]

    @property
    def kernel_size(self):
        return self.base.shape[2]

    def to_bytes(self):
        buf = io.BytesIO()
        buf.write(struct.pack("<?", self.pos_enabled))
        for arr in (self.base, self.pos):
            data = np.ascontiguousarray(arr)
            buf.write(struct.pack("<B", 1 if data.dtype == np.float64 else 0))
            buf.write(struct.pack("<I", data.ndim))
            buf.write(struct.pack(f"<{data.ndim}I", *data.shape))
            buf.write(data.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw):
        buf = io.BytesIO(raw)
        (pos_enabled,) = struct.unpack("<?", buf.read(1))
        arrs = []
        for _ in range(2):
            (wide,) = struct.unpack("<B", buf.read(1))
            (ndim,) = struct.unpack("<I", buf.read(4))
            shape = struct.unpack(f"<{ndim}I", buf.read(4 * ndim))
            dtype = np.float64 if wide else np.float32
            n = int(np.prod(shape))
            arrs.append(np.frombuffer(buf.read(n * dtype().itemsize),
                                      dtype=dtype).reshape(shape).copy())
        return cls(arrs[0], arrs[1], pos_enabled)


def _check_alpha(alpha, bank):
    if alpha.ndim != 5:
        raise ConfigurationError("alpha must be (N, A, bases, H, W)")
    a = alpha.shape[1]
    if a not in (1, bank.num_heads):
        raise ConfigurationError(
            f"alpha head axis {a} must be 1 (shared) or {bank.num_heads}")
    if alpha.shape[2] != bank.num_bases:
        raise ConfigurationError(
            f"alpha has {alpha.shape[2]} bases, bank has {bank.num_bases}")
    return a


def construct_maps(alpha, bank):
    """Mix base kernels by alpha and add the position kernel.

    alpha (N, A, bases, H, W) with A == heads, or A == 1 when the mixture
    is shared across heads.  Returns maps (N, heads*G*G, H, W) laid out as
    head-major kernel taps.  An empty bank (bases == 0) yields pure
    position maps.
    """
    a = _check_alpha(alpha, bank)
    n, _, _, h, w = alpha.shape
    heads, g = bank.num_heads, bank.kernel_size
    baseflat = bank.base.reshape(heads, bank.num_bases, g * g)
    if a == 1:
        maps = np.einsum("niyx,hig->nhgyx", alpha[:, 0], baseflat,
                         optimize=True)
    else:
        maps = np.einsum("nhiyx,hig->nhgyx", alpha, baseflat, optimize=True)
    if bank.pos_enabled:
        maps = maps + bank.pos.reshape(1, heads, g * g, 1, 1)
    return np.ascontiguousarray(maps.reshape(n, heads * g * g, h, w))


def construct_maps_backward(grad_maps, alpha, bank):
    """Gradients of construct_maps: (grad_alpha, grad_base, grad_pos).

    grad_pos is None when the position kernel is disabled.
    """
    a = _check_alpha(alpha, bank)
    n = alpha.shape[0]
    heads, g = bank.num_heads, bank.kernel_size
    h, w = alpha.shape[3:]
    gm = grad_maps.reshape(n, heads, g * g, h, w)
    baseflat = bank.base.reshape(heads, bank.num_bases, g * g)
    if a == 1:
        grad_alpha = np.einsum("nhgyx,hig->niyx", gm, baseflat,
                               optimize=True)[:, None]
        grad_base = np.einsum("nhgyx,niyx->hig", gm, alpha[:, 0],
                              optimize=True)
    else:
        grad_alpha = np.einsum("nhgyx,hig->nhiyx", gm, baseflat,
                               optimize=True)
        grad_base = np.einsum("nhgyx,nhiyx->hig", gm, alpha, optimize=True)
    grad_base = grad_base.reshape(bank.base.shape)
    grad_pos = gm.sum(axis=(0, 3, 4)).reshape(heads, g, g) \
        if bank.pos_enabled else None
    return grad_alpha, grad_base, grad_pos


def mh_dw_conv(x, weight, bias=None, head_channels=1, stride=1):
    """Multi-head depthwise convolution: one G x G kernel per head, shared
    by that head's ``head_channels`` consecutive channels.  Padding G//2.

    weight (heads, G, G); bias (heads,) or None.
    """
    n, c = x.shape[:2]
    heads, g, g2 = weight.shape
    if g != g2 or g % 2 == 0:
        raise ConfigurationError(f"kernel {g}x{g2} must be square and odd")
    if c != heads * head_channels:
        raise ConfigurationError(
            f"C={c} must equal heads*head_channels={heads}*{head_channels}")
    xp = ops.pad2d(x, g // 2)
    cols, h_out, w_out = ops.unfold(xp, g, g, stride)
    cols = cols.reshape(n, heads, head_channels, g, g, h_out, w_out)
    out = np.einsum("hij,nhcijyx->nhcyx", weight, cols, optimize=True)
    if bias is not None:
        out = out + bias.reshape(1, heads, 1, 1, 1)
    return np.ascontiguousarray(out.reshape(n, c, h_out, w_out))


def mh_dw_conv_backward(grad_out, x, weight, head_channels=1, stride=1,
                        with_bias=False):
    """Gradients of mh_dw_conv: (grad_x, grad_weight, grad_bias)."""
    n, c, h, w = x.shape
    heads, g, _ = weight.shape
    pad = g // 2
    xp = ops.pad2d(x, pad)
    h_out, w_out = grad_out.shape[2:]
    cols, _, _ = ops.unfold(xp, g, g, stride)
    cols = cols.reshape(n, heads, head_channels, g, g, h_out, w_out)
    go = grad_out.reshape(n, heads, head_channels, h_out, w_out)
    grad_weight = np.einsum("nhcyx,nhcijyx->hij", go, cols, optimize=True)
    grad_bias = go.sum(axis=(0, 2, 3, 4)) if with_bias else None
    grad_xp = np.zeros_like(xp)
    for i in range(g):
        for j in range(g):
            contrib = go * weight[None, :, None, i, j, None, None]
            grad_xp[:, :, i:i + stride * h_out:stride,
                    j:j + stride * w_out:stride] += contrib.reshape(
                        n, c, h_out, w_out)
    if pad:
        grad_x = grad_xp[:, :, pad:pad + h, pad:pad + w].copy()
    else:
        grad_x = grad_xp
    return grad_x, grad_weight, grad_bias

"""Stateful layers over the functional ops.

A Layer owns Params (value + accumulated gradient), caches what its
backward pass needs during forward, and registers child layers and params
in declaration order.  That order is the serialization order, so it must
be stable across processes.
"""

import numpy as np

from . import ops
from .errors import ConfigurationError


class Param:
    """A trainable array with its gradient accumulator.

    ``decay`` marks whether weight decay applies (the training loop can
    clear it on normalisation params).
    """

    __slots__ = ("data", "grad", "decay")

    def __init__(self, data, decay=True):
        self.data = data
        self.grad = np.zeros_like(data)
        self.decay = decay


class Layer:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Layer):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_params(self, prefix=""):
        """All params, depth first, in declaration order."""
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, child in self._children.items():
            yield from child.named_params(prefix + name + ".")

    def named_children(self, prefix=""):
        for name, child in self._children.items():
            path = prefix + name
            yield (path, child)
            yield from child.named_children(path + ".")

    def zero_grad(self):
        for _, p in self.named_params():
            p.grad[...] = 0.0

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def named_arrays(self, prefix=""):
        """Params then state buffers, depth first, declaration order.

        This is the checkpoint blob order, so it must be stable."""
        for name, p in self._params.items():
            yield (prefix + name, p.data)
        for name, arr in self.local_buffers():
            yield (prefix + name, arr)
        for name, child in self._children.items():
            yield from child.named_arrays(prefix + name + ".")

    def local_buffers(self):
        return []

    # Profiling hooks.  Leaves report their own cost; composites chain
    # their children.  Layers with branches or off-graph cost override.
    def out_shape(self, in_shape):
        return in_shape

    def n_params(self):
        return sum(p.data.size for _, p in self._params.items())

    def macs(self, in_shape):
        return 0

    def profile_rows(self, name, in_shape, rows):
        if self._children:
            if self._params:
                rows.append((name + ".params",
                             sum(p.data.size for p in self._params.values()),
                             0))
            shape = in_shape
            for cname, child in self._children.items():
                path = f"{name}.{cname}" if name else cname
                shape = child.profile_rows(path, shape, rows)
            return shape
        p, m = self.n_params(), self.macs(in_shape)
        out = self.out_shape(in_shape)
        if p or m:
            rows.append((name, p, m))
        return out


def kaiming_normal(rng, shape, fan_in, dtype):
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Layer):
    def __init__(self, c_in, c_out, k, stride=1, padding=None, groups=1,
                 bias=True, rng=None, dtype=np.float32):
        super().__init__()
        if padding is None:
            padding = k // 2
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.padding, self.groups = stride, padding, groups
        if groups < 1 or c_in % groups or c_out % groups:
            raise ConfigurationError(
                f"groups={groups} must divide C_in={c_in} and C_out={c_out}")
        fan_in = (c_in // groups) * k * k
        rng = rng or np.random.default_rng(0)
        self.weight = Param(kaiming_normal(rng, (c_out, c_in // groups, k, k),
                                           fan_in, dtype))
        self.bias = Param(np.zeros(c_out, dtype=dtype)) if bias else None
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        b = self.bias.data if self.bias is not None else None
        return ops.conv2d(x, self.weight.data, b, self.stride, self.padding,
                          self.groups)

    def backward(self, grad_out):
        gx, gw, gb = ops.conv2d_backward(
            grad_out, self._x, self.weight.data, self.stride, self.padding,
            self.groups, with_bias=self.bias is not None)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        ho, wo = ops.conv_out_hw((h, w), self.k, self.stride, self.padding)
        return (n, self.c_out, ho, wo)

    def macs(self, in_shape):
        _, c_out, ho, wo = self.out_shape(in_shape)
        return c_out * ho * wo * (self.c_in // self.groups) * self.k * self.k


class BatchNorm2d(Layer):
    def __init__(self, c, eps=1e-5, momentum=0.1, dtype=np.float32):
        super().__init__()
        self.c = c
        self.eps = eps
        self.momentum = momentum
        self.scale = Param(np.ones(c, dtype=dtype))
        self.shift = Param(np.zeros(c, dtype=dtype))
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self._cache = None

    def local_buffers(self):
        return [("running_mean", self.running_mean),
                ("running_var", self.running_var)]

    def forward(self, x, train=False):
        out, self._cache = ops.batch_norm(
            x, self.scale.data, self.shift.data, self.running_mean,
            self.running_var, train, self.eps, self.momentum)
        return out

    def backward(self, grad_out):
        gx, gs, gb = ops.batch_norm_backward(grad_out, self.scale.data,
                                             self._cache)
        self.scale.grad += gs
        self.shift.grad += gb
        return gx


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return ops.relu(x)

    def backward(self, grad_out):
        return ops.relu_backward(grad_out, self._x)


class MaxPool2d(Layer):
    def __init__(self, k, stride, padding=0):
        super().__init__()
        self.k, self.stride, self.padding = k, stride, padding
        self._x = None
        self._arg = None

    def forward(self, x, train=False):
        self._x = x
        out, self._arg = ops.max_pool(x, self.k, self.stride, self.padding)
        return out

    def backward(self, grad_out):
        return ops.max_pool_backward(grad_out, self._x, self._arg, self.k,
                                     self.stride, self.padding)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        ho, wo = ops.conv_out_hw((h, w), self.k, self.stride, self.padding)
        return (n, c, ho, wo)


class AvgPool2d(Layer):
    def __init__(self, k, stride, padding=0):
        super().__init__()
        self.k, self.stride, self.padding = k, stride, padding
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return ops.avg_pool(x, self.k, self.stride, self.padding)

    def backward(self, grad_out):
        return ops.avg_pool_backward(grad_out, self._x, self.k, self.stride,
                                     self.padding)

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        ho, wo = ops.conv_out_hw((h, w), self.k, self.stride, self.padding)
        return (n, c, ho, wo)


class GlobalAvgPool(Layer):
    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        return ops.global_avg_pool(x)

    def backward(self, grad_out):
        return ops.global_avg_pool_backward(grad_out, self._x)

    def out_shape(self, in_shape):
        return (in_shape[0], in_shape[1])


class Linear(Layer):
    def __init__(self, n_in, n_out, bias=True, rng=None, dtype=np.float32):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng or np.random.default_rng(0)
        self.weight = Param(kaiming_normal(rng, (n_out, n_in), n_in, dtype))
        self.bias = Param(np.zeros(n_out, dtype=dtype)) if bias else None
        self._x = None

    def forward(self, x, train=False):
        self._x = x
        b = self.bias.data if self.bias is not None else None
        return ops.linear(x, self.weight.data, b)

    def backward(self, grad_out):
        gx, gw, gb = ops.linear_backward(grad_out, self._x, self.weight.data,
                                         with_bias=self.bias is not None)
        self.weight.grad += gw
        if self.bias is not None:
            self.bias.grad += gb
        return gx

    def out_shape(self, in_shape):
        return (in_shape[0], self.n_out)

    def macs(self, in_shape):
        return self.n_in * self.n_out


class Sequential(Layer):
    def __init__(self, **layers):
        super().__init__()
        for name, layer in layers.items():
            setattr(self, name, layer)

    def forward(self, x, train=False):
        for child in self._children.values():
            x = child.forward(x, train)
        return x

    def backward(self, grad_out):
        for child in reversed(list(self._children.values())):
            grad_out = child.backward(grad_out)
        return grad_out

"""Dense NCHW tensor primitives with explicit backward passes.

Tensors are plain numpy arrays, layout (N, C, H, W), float32 for training
and float64 for numerical verification.  Every operation is a pure
function: forward returns outputs (plus a cache where the backward pass
needs saved intermediates), backward consumes the upstream gradient and
returns input/parameter gradients.  Padding is always zero padding and
convolution means cross-correlation (no kernel flip).
"""

import numpy as np

from .errors import ConfigurationError


def pad2d(x, pad):
    """Zero-pad the two trailing axes by ``pad`` on each side."""
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def unfold(xp, kh, kw, stride):
    """Sliding-window view of a padded NCHW array.

    Returns (view, h_out, w_out) with view shape (N, C, kh, kw, h_out, w_out).
    The view shares memory with ``xp``; callers must not write through it.
    """
    n, c, h, w = xp.shape
    if h < kh or w < kw:
        raise ConfigurationError(
            f"window {kh}x{kw} does not fit padded input {h}x{w}"
        )
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    shape = (n, c, kh, kw, h_out, w_out)
    strides = (sn, sc, sh, sw, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape, strides), h_out, w_out


def conv_out_hw(hw, k, stride, padding):
    h, w = hw
    return ((h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1)


def _check_conv_args(c_in, weight, groups):
    c_out, c_in_g, kh, kw = weight.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ConfigurationError(
            f"groups={groups} must divide C_in={c_in} and C_out={c_out}"
        )
    if c_in // groups != c_in_g:
        raise ConfigurationError(
            f"weight expects {c_in_g} channels per group, input provides {c_in // groups}"
        )
    return c_out, c_in_g, kh, kw


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Grouped 2-D cross-correlation.

    x (N, C_in, H, W), weight (C_out, C_in/groups, kH, kW), bias (C_out,)
    or None.  Implemented as an unfold plus one batched matmul per call so
    the heavy lifting stays in BLAS.
    """
    n, c_in = x.shape[:2]
    c_out, c_in_g, kh, kw = _check_conv_args(c_in, weight, groups)
    xp = pad2d(x, padding)
    cols, h_out, w_out = unfold(xp, kh, kw, stride)
    cols = cols.reshape(n, groups, c_in_g * kh * kw, h_out * w_out)
    wmat = weight.reshape(groups, c_out // groups, c_in_g * kh * kw)
    out = np.matmul(wmat[None], cols).reshape(n, c_out, h_out, w_out)
    if bias is not None:
        out += bias.reshape(1, c_out, 1, 1)
    return out


def conv2d_backward(grad_out, x, weight, stride=1, padding=0, groups=1,
                    with_bias=False):
    """Gradients of conv2d.  Returns (grad_x, grad_weight, grad_bias)."""
    n, c_in, h, w = x.shape
    c_out, c_in_g, kh, kw = _check_conv_args(c_in, weight, groups)
    h_out, w_out = grad_out.shape[2:]
    grad_bias = grad_out.sum(axis=(0, 2, 3)) if with_bias else None

    xp = pad2d(x, padding)
    cols, _, _ = unfold(xp, kh, kw, stride)
    cols = cols.reshape(n, groups, c_in_g * kh * kw, h_out * w_out)
    go = grad_out.reshape(n, groups, c_out // groups, h_out * w_out)

    grad_weight = np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0)
    grad_weight = grad_weight.reshape(weight.shape)

    wmat = weight.reshape(groups, c_out // groups, c_in_g * kh * kw)
    gcols = np.matmul(wmat.transpose(0, 2, 1)[None], go)
    gcols = gcols.reshape(n, c_in, kh, kw, h_out, w_out)
    grad_xp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            grad_xp[:, :, i:i + stride * h_out:stride,
                    j:j + stride * w_out:stride] += gcols[:, :, i, j]
    if padding:
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w].copy()
    else:
        grad_x = grad_xp
    return grad_x, grad_weight, grad_bias


def batch_norm(x, scale, shift, running_mean, running_var, train,
               eps=1e-5, momentum=0.1):
    """Per-channel batch normalisation.

    Train mode normalises by batch statistics (biased variance) and updates
    the running buffers in place with the usual unbiased correction.  Eval
    mode normalises by the running buffers.  Returns (out, cache); pass the
    cache to :func:`batch_norm_backward`.
    """
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        m = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * m / (m - 1) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(1, -1, 1, 1)) * inv_std.reshape(1, -1, 1, 1)
    out = scale.reshape(1, -1, 1, 1) * xhat + shift.reshape(1, -1, 1, 1)
    return out, (xhat, inv_std, train)


def batch_norm_backward(grad_out, scale, cache):
    """Gradients of batch_norm.  Returns (grad_x, grad_scale, grad_shift)."""
    xhat, inv_std, train = cache
    grad_scale = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_shift = grad_out.sum(axis=(0, 2, 3))
    s = (scale * inv_std).reshape(1, -1, 1, 1)
    if not train:
        return grad_out * s, grad_scale, grad_shift
    m = grad_out.shape[0] * grad_out.shape[2] * grad_out.shape[3]
    mean_g = grad_out.mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    mean_gx = (grad_out * xhat).mean(axis=(0, 2, 3)).reshape(1, -1, 1, 1)
    grad_x = s * (grad_out - mean_g - xhat * mean_gx)
    return grad_x, grad_scale, grad_shift


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return np.where(x > 0.0, grad_out, 0.0)


def max_pool(x, k, stride, padding=0):
    """Max pooling.  Returns (out, argmax) where argmax holds flat window
    indices used by the backward pass.  Padding uses -inf so padded cells
    never win."""
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=-np.inf)
    else:
        xp = x
    cols, h_out, w_out = unfold(xp, k, k, stride)
    n, c = x.shape[:2]
    cols = cols.reshape(n, c, k * k, h_out * w_out)
    arg = cols.argmax(axis=2)
    out = np.take_along_axis(cols, arg[:, :, None], axis=2)[:, :, 0]
    return out.reshape(n, c, h_out, w_out), arg


def max_pool_backward(grad_out, x, argmax, k, stride, padding=0):
    n, c, h, w = x.shape
    h_out, w_out = grad_out.shape[2:]
    hp, wp = h + 2 * padding, w + 2 * padding
    grad_xp = np.zeros((n, c, hp, wp), dtype=grad_out.dtype)
    ii, jj = np.divmod(argmax, k)                       # (n, c, L)
    oy, ox = np.divmod(np.arange(h_out * w_out), w_out)
    rows = oy * stride + ii
    cols = ox * stride + jj
    flat = (rows * wp + cols)
    nn = np.arange(n).reshape(n, 1, 1)
    cc = np.arange(c).reshape(1, c, 1)
    np.add.at(grad_xp.reshape(n, c, hp * wp), (nn, cc, flat),
              grad_out.reshape(n, c, -1))
    if padding:
        return grad_xp[:, :, padding:padding + h, padding:padding + w].copy()
    return grad_xp


def avg_pool(x, k, stride, padding=0):
    """Average pooling; zero padding counts toward the divisor k*k."""
    xp = pad2d(x, padding)
    cols, h_out, w_out = unfold(xp, k, k, stride)
    out = cols.sum(axis=(2, 3)) / (k * k)
    return out


def avg_pool_backward(grad_out, x, k, stride, padding=0):
    n, c, h, w = x.shape
    h_out, w_out = grad_out.shape[2:]
    grad_xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding),
                       dtype=grad_out.dtype)
    g = grad_out / (k * k)
    for i in range(k):
        for j in range(k):
            grad_xp[:, :, i:i + stride * h_out:stride,
                    j:j + stride * w_out:stride] += g
    if padding:
        return grad_xp[:, :, padding:padding + h, padding:padding + w].copy()
    return grad_xp


def global_avg_pool(x):
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(grad_out, x):
    n, c, h, w = x.shape
    return np.broadcast_to(grad_out[:, :, None, None] / (h * w), x.shape).copy()


def linear(x, weight, bias=None):
    """x (N, in) @ weight (out, in).T + bias."""
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out


def linear_backward(grad_out, x, weight, with_bias=False):
    grad_x = grad_out @ weight
    grad_weight = grad_out.T @ x
    grad_bias = grad_out.sum(axis=0) if with_bias else None
    return grad_x, grad_weight, grad_bias


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch.

    logits (N, K), labels (N,) integer class ids.  Returns (loss, grad)
    where grad is d(loss)/d(logits); the loss is terminal so the gradient
    needs no upstream factor.
    """
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    nll = -(shifted[np.arange(n), labels]
            - np.log(exp.sum(axis=1)))
    loss = nll.mean()
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def fft2(x):
    """Unitary 2-D DFT over the two trailing axes."""
    return np.fft.fft2(x, norm="ortho")


def ifft2(x):
    """Unitary 2-D inverse DFT over the two trailing axes."""
    return np.fft.ifft2(x, norm="ortho")

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled aggregation kernels.

Per-location G x G filter application (forward, input gradient, map
gradient) written as straight loops over typed memoryviews.  This is the
one hot path that cannot be phrased as a BLAS matmul; everything else in
the package stays in numpy.  Inputs arrive pre-padded; see
`kernels.py` for the dispatching wrappers and the numpy twin.
"""

cimport cython

ctypedef fused real:
    float
    double


def agg_forward(real[:, :, :, ::1] xp, real[:, :, :, ::1] maps,
                int head_ch, int stride, int ksize,
                real[:, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t gg = ksize * ksize
    cdef Py_ssize_t b, ch, y, x, i, j, base
    cdef real acc
    for b in range(n):
        for ch in range(c):
            base = (ch // head_ch) * gg
            for y in range(ho):
                for x in range(wo):
                    acc = 0
                    for i in range(ksize):
                        for j in range(ksize):
                            acc = acc + maps[b, base + i * ksize + j, y, x] \
                                * xp[b, ch, y * stride + i, x * stride + j]
                    out[b, ch, y, x] = acc


def agg_backward_input(real[:, :, :, ::1] grad_out, real[:, :, :, ::1] maps,
                       int head_ch, int stride, int ksize,
                       real[:, :, :, ::1] grad_xp):
    cdef Py_ssize_t n = grad_out.shape[0], c = grad_out.shape[1]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef Py_ssize_t gg = ksize * ksize
    cdef Py_ssize_t b, ch, y, x, i, j, base
    cdef real g
    for b in range(n):
        for ch in range(c):
            base = (ch // head_ch) * gg
            for y in range(ho):
                for x in range(wo):
                    g = grad_out[b, ch, y, x]
                    for i in range(ksize):
                        for j in range(ksize):
                            grad_xp[b, ch, y * stride + i, x * stride + j] = \
                                grad_xp[b, ch, y * stride + i, x * stride + j] \
                                + g * maps[b, base + i * ksize + j, y, x]


def agg_backward_maps(real[:, :, :, ::1] grad_out, real[:, :, :, ::1] xp,
                      int head_ch, int stride, int ksize,
                      real[:, :, :, ::1] grad_maps):
    cdef Py_ssize_t n = grad_out.shape[0], c = grad_out.shape[1]
    cdef Py_ssize_t ho = grad_out.shape[2], wo = grad_out.shape[3]
    cdef Py_ssize_t gg = ksize * ksize
    cdef Py_ssize_t b, ch, y, x, i, j, base
    cdef real g
    for b in range(n):
        for ch in range(c):
            base = (ch // head_ch) * gg
            for y in range(ho):
                for x in range(wo):
                    g = grad_out[b, ch, y, x]
                    for i in range(ksize):
                        for j in range(ksize):
                            grad_maps[b, base + i * ksize + j, y, x] = \
                                grad_maps[b, base + i * ksize + j, y, x] \
                                + g * xp[b, ch, y * stride + i, x * stride + j]

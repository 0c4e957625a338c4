# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: 3x3-ish strided convolution and bilinear sampling.

Accumulation order per output element matches kernels_py (ascending
c_in, kh, kw), and the build disables FP contraction, so forward results
are bit-identical to the numpy fallback.
"""

import numpy as np

from libc.math cimport floor

cimport numpy as cnp

cnp.import_array()

COMPILED = True


def conv2d_forward(double[:, :, ::1] xp, double[:, :, :, ::1] kernels, int stride):
    cdef Py_ssize_t c_out = kernels.shape[0]
    cdef Py_ssize_t c_in = kernels.shape[1]
    cdef Py_ssize_t k = kernels.shape[2]
    cdef Py_ssize_t h_out = (xp.shape[1] - k) // stride + 1
    cdef Py_ssize_t w_out = (xp.shape[2] - k) // stride + 1
    out_arr = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, ci, kh, kw, oh, ow, ih
    cdef double kv
    with nogil:
        for co in range(c_out):
            for ci in range(c_in):
                for kh in range(k):
                    for kw in range(k):
                        kv = kernels[co, ci, kh, kw]
                        for oh in range(h_out):
                            ih = oh * stride + kh
                            for ow in range(w_out):
                                out[co, oh, ow] = out[co, oh, ow] + kv * xp[ci, ih, ow * stride + kw]
    return out_arr


def conv2d_backward(double[:, :, ::1] xp, double[:, :, :, ::1] kernels,
                    double[:, :, ::1] upstream, int stride):
    cdef Py_ssize_t c_out = kernels.shape[0]
    cdef Py_ssize_t c_in = kernels.shape[1]
    cdef Py_ssize_t k = kernels.shape[2]
    cdef Py_ssize_t h_out = upstream.shape[1]
    cdef Py_ssize_t w_out = upstream.shape[2]
    dk_arr = np.zeros((c_out, c_in, k, k), dtype=np.float64)
    dx_arr = np.zeros((xp.shape[0], xp.shape[1], xp.shape[2]), dtype=np.float64)
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef double[:, :, ::1] dx = dx_arr
    cdef Py_ssize_t co, ci, kh, kw, oh, ow, ih, iw
    cdef double kv, acc, u
    with nogil:
        for co in range(c_out):
            for ci in range(c_in):
                for kh in range(k):
                    for kw in range(k):
                        kv = kernels[co, ci, kh, kw]
                        acc = 0.0
                        for oh in range(h_out):
                            ih = oh * stride + kh
                            for ow in range(w_out):
                                iw = ow * stride + kw
                                u = upstream[co, oh, ow]
                                acc = acc + u * xp[ci, ih, iw]
                                dx[ci, ih, iw] = dx[ci, ih, iw] + u * kv
                        dk[co, ci, kh, kw] = acc
    return dk_arr, dx_arr


cdef inline double _at(double[:, ::1] u, Py_ssize_t h, Py_ssize_t w) nogil:
    if h < 0 or w < 0 or h >= u.shape[0] or w >= u.shape[1]:
        return 0.0
    return u[h, w]


def bilinear_forward(double[:, ::1] u, double[:, ::1] xt, double[:, ::1] yt):
    cdef Py_ssize_t n = xt.shape[0]
    cdef Py_ssize_t m = xt.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, h0, w0
    cdef double x, y, tx, ty, u00, u01, u10, u11
    with nogil:
        for i in range(n):
            for j in range(m):
                x = xt[i, j]
                y = yt[i, j]
                w0 = <Py_ssize_t>floor(x)
                h0 = <Py_ssize_t>floor(y)
                tx = x - w0
                ty = y - h0
                u00 = _at(u, h0, w0)
                u01 = _at(u, h0, w0 + 1)
                u10 = _at(u, h0 + 1, w0)
                u11 = _at(u, h0 + 1, w0 + 1)
                out[i, j] = (u00 * (1.0 - tx) * (1.0 - ty) + u01 * tx * (1.0 - ty)
                             + u10 * (1.0 - tx) * ty + u11 * tx * ty)
    return out_arr


def bilinear_coord_grad(double[:, ::1] u, double[:, ::1] xt, double[:, ::1] yt,
                        double[:, ::1] upstream):
    cdef Py_ssize_t n = xt.shape[0]
    cdef Py_ssize_t m = xt.shape[1]
    dx_arr = np.empty((n, m), dtype=np.float64)
    dy_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dxv = dx_arr
    cdef double[:, ::1] dyv = dy_arr
    cdef Py_ssize_t i, j, h0, w0
    cdef double x, y, tx, ty, u00, u01, u10, u11
    cdef double wx0, wx1, wy0, wy1, gx0, gx1, gy0, gy1, up
    with nogil:
        for i in range(n):
            for j in range(m):
                x = xt[i, j]
                y = yt[i, j]
                w0 = <Py_ssize_t>floor(x)
                h0 = <Py_ssize_t>floor(y)
                tx = x - w0
                ty = y - h0
                u00 = _at(u, h0, w0)
                u01 = _at(u, h0, w0 + 1)
                u10 = _at(u, h0 + 1, w0)
                u11 = _at(u, h0 + 1, w0 + 1)
                wx0 = 1.0 - tx
                wx1 = tx
                wy0 = 1.0 - ty
                wy1 = ty
                if tx > 0:
                    gx0 = -1.0
                    gx1 = 1.0
                else:
                    gx0 = 1.0
                    gx1 = 0.0
                if ty > 0:
                    gy0 = -1.0
                    gy1 = 1.0
                else:
                    gy0 = 1.0
                    gy1 = 0.0
                up = upstream[i, j]
                dxv[i, j] = up * (gx0 * (u00 * wy0 + u10 * wy1) + gx1 * (u01 * wy0 + u11 * wy1))
                dyv[i, j] = up * (gy0 * (u00 * wx0 + u01 * wx1) + gy1 * (u10 * wx0 + u11 * wx1))
    return dx_arr, dy_arr

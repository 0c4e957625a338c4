"""Pure-numpy kernels: the fallback backend when the compiled extension is absent.

The convolution accumulates each output element over (c_in, kh, kw) in
ascending order, one product at a time. The compiled backend uses the same
order, so the two produce bit-identical forward outputs.
"""

import numpy as np

COMPILED = False


def conv2d_forward(xp, kernels, stride):
    """Convolve a pre-padded input (C_in, Hp, Wp) with kernels (C_out, C_in, k, k)."""
    c_out, c_in, k, _ = kernels.shape
    hp, wp = xp.shape[1], xp.shape[2]
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    out = np.zeros((c_out, h_out, w_out), dtype=np.float64)
    for ci in range(c_in):
        for kh in range(k):
            for kw in range(k):
                win = xp[ci,
                         kh:kh + stride * h_out:stride,
                         kw:kw + stride * w_out:stride]
                out += kernels[:, ci, kh, kw][:, None, None] * win
    return out


def conv2d_backward(xp, kernels, upstream, stride):
    """Gradients of a conv2d output sum w.r.t. kernels and the padded input."""
    c_out, c_in, k, _ = kernels.shape
    h_out, w_out = upstream.shape[1], upstream.shape[2]
    d_kernels = np.empty_like(kernels)
    d_xp = np.zeros_like(xp)
    up_flat = upstream.reshape(c_out, -1)
    kern_flat = kernels.reshape(c_out, -1)
    # One dgemm for the column gradients, then scatter-add per kernel tap.
    d_cols = kern_flat.T @ up_flat  # (c_in*k*k, h_out*w_out)
    patches = np.empty((c_in * k * k, h_out * w_out), dtype=np.float64)
    idx = 0
    for ci in range(c_in):
        for kh in range(k):
            for kw in range(k):
                win = xp[ci,
                         kh:kh + stride * h_out:stride,
                         kw:kw + stride * w_out:stride]
                patches[idx] = win.reshape(-1)
                d_xp[ci,
                     kh:kh + stride * h_out:stride,
                     kw:kw + stride * w_out:stride] += d_cols[idx].reshape(h_out, w_out)
                idx += 1
    d_kernels[:] = (up_flat @ patches.T).reshape(kernels.shape)
    return d_kernels, d_xp


def _gather(u, hh, ww):
    """Image values at integer (row, col) index arrays; 0 outside the raster."""
    h, w = u.shape
    inb = (hh >= 0) & (hh < h) & (ww >= 0) & (ww < w)
    vals = np.zeros(hh.shape, dtype=np.float64)
    vals[inb] = u[hh[inb], ww[inb]]
    return vals


def bilinear_forward(u, xt, yt):
    """Bilinear sample of image u at pixel-unit coords (xt, yt); outside -> 0."""
    w0 = np.floor(xt).astype(np.int64)
    h0 = np.floor(yt).astype(np.int64)
    tx = xt - w0
    ty = yt - h0
    u00 = _gather(u, h0, w0)
    u01 = _gather(u, h0, w0 + 1)
    u10 = _gather(u, h0 + 1, w0)
    u11 = _gather(u, h0 + 1, w0 + 1)
    return (u00 * (1.0 - tx) * (1.0 - ty) + u01 * tx * (1.0 - ty)
            + u10 * (1.0 - tx) * ty + u11 * tx * ty)


def bilinear_coord_grad(u, xt, yt, upstream):
    """Gradient of the sampled values w.r.t. the sample coordinates.

    Follows the piecewise sign convention of the sampling kernel: the
    derivative w.r.t. x is +1 on the neighbor at or right of the sample,
    -1 left of it, 0 at distance >= 1 (and symmetrically for y).
    """
    w0 = np.floor(xt).astype(np.int64)
    h0 = np.floor(yt).astype(np.int64)
    tx = xt - w0
    ty = yt - h0
    u00 = _gather(u, h0, w0)
    u01 = _gather(u, h0, w0 + 1)
    u10 = _gather(u, h0 + 1, w0)
    u11 = _gather(u, h0 + 1, w0 + 1)
    wx0, wx1 = 1.0 - tx, tx
    wy0, wy1 = 1.0 - ty, ty
    # tx == 0 puts the sample exactly on column w0: that neighbor counts as
    # "w >= x" (slope +1) and w0+1 sits at distance exactly 1 (slope 0).
    gx0 = np.where(tx > 0, -1.0, 1.0)
    gx1 = np.where(tx > 0, 1.0, 0.0)
    gy0 = np.where(ty > 0, -1.0, 1.0)
    gy1 = np.where(ty > 0, 1.0, 0.0)
    dxt = upstream * (gx0 * (u00 * wy0 + u10 * wy1) + gx1 * (u01 * wy0 + u11 * wy1))
    dyt = upstream * (gy0 * (u00 * wx0 + u01 * wx1) + gy1 * (u10 * wx0 + u11 * wx1))
    return dxt, dyt

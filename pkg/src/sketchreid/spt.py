"""Learnable spatial polar transformation.

A positive-part cumulative weight vector lambda maps to a nondecreasing
z in (0, 1], z maps affinely onto the angle range [a, b], and the resulting
(angle, radius) grid drives differentiable bilinear sampling of the sketch.
Gradients flow from the sampled image back to lambda.

Coordinate frame: normalized coordinates with (0,0) at the image center,
x rightward, y upward; row index increases downward, so
x~ = (x+1)/2*(W-1) and y~ = (1-y)/2*(H-1). Samples outside the raster
contribute 0, which coincides with the 0 background of sketch images.
"""

from dataclasses import dataclass

import numpy as np

from sketchreid import backend
from sketchreid.errors import ConfigError, ContractViolation, DegenerateParameterError

LAMBDA_INIT = 0.05
DEGENERATE_EPS = 1e-8


@dataclass(frozen=True)
class SptConfig:
    n_angles: int
    n_radii: int
    max_radius: float = 2.0
    angle_start: float = np.pi
    angle_end: float = -np.pi
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        if self.n_angles < 2 or self.n_radii < 2:
            raise ConfigError("need at least 2 sampled angles and radii")
        if self.max_radius <= 0:
            raise ConfigError("max_radius must be positive")
        if self.angle_start == self.angle_end:
            raise ConfigError("angle range is empty")


@dataclass
class SamplingGrid:
    xs: np.ndarray      # (N, M) normalized x of each sample
    ys: np.ndarray      # (N, M) normalized y
    theta: np.ndarray   # (N,)
    radius: np.ndarray  # (M,)


def init_lambda(n, value=LAMBDA_INIT):
    return np.full(n, value, dtype=np.float64)


def lambda_to_z(lam):
    """z_i = sum_{k<=i} max(0, lambda_k) / sum_k max(0, lambda_k)."""
    clipped = np.maximum(lam, 0.0)
    total = clipped.sum()
    if total <= DEGENERATE_EPS:
        raise DegenerateParameterError(
            "all angle weights non-positive; re-initialize lambda")
    return np.cumsum(clipped) / total


def z_to_theta(z, a, b):
    return (b - a) * z + a


def build_grid(theta, config):
    lo, hi = sorted((config.angle_start, config.angle_end))
    if np.any(theta < lo - 1e-12) or np.any(theta > hi + 1e-12):
        raise ContractViolation("theta outside the configured angle range")
    r = np.arange(config.n_radii, dtype=np.float64) * (config.max_radius / config.n_radii)
    ox, oy = config.origin
    xs = ox + r[None, :] * np.cos(theta)[:, None]
    ys = oy + r[None, :] * np.sin(theta)[:, None]
    return SamplingGrid(xs=xs, ys=ys, theta=np.asarray(theta, dtype=np.float64), radius=r)


def _to_pixel(grid, h, w):
    xt = (grid.xs + 1.0) / 2.0 * (w - 1)
    yt = (1.0 - grid.ys) / 2.0 * (h - 1)
    return np.ascontiguousarray(xt), np.ascontiguousarray(yt)


def spt_forward(image, grid):
    """Bilinear-sample the sketch on the polar grid -> (N, M) transformed image."""
    h, w = image.shape
    xt, yt = _to_pixel(grid, h, w)
    return backend.bilinear_forward(np.ascontiguousarray(image), xt, yt)


def spt_backward(image, grid, theta, upstream):
    """Gradient of an (N, M)-upstream w.r.t. theta (length N)."""
    if upstream.shape != grid.xs.shape:
        raise ContractViolation(
            f"upstream shape {upstream.shape} != grid shape {grid.xs.shape}")
    h, w = image.shape
    xt, yt = _to_pixel(grid, h, w)
    dxt, dyt = backend.bilinear_coord_grad(
        np.ascontiguousarray(image), xt, yt, np.ascontiguousarray(upstream))
    # Chain through pixel conversion and the polar grid:
    # dx~/dx = (W-1)/2, dy~/dy = -(H-1)/2,
    # dx/dtheta_i = -r_j sin(theta_i), dy/dtheta_i = r_j cos(theta_i).
    r = grid.radius[None, :]
    d_x = dxt * ((w - 1) / 2.0) * (-r * np.sin(theta)[:, None])
    d_y = dyt * (-(h - 1) / 2.0) * (r * np.cos(theta)[:, None])
    return (d_x + d_y).sum(axis=1)


def min_breakpoint_distance(image_shape, grid):
    """Smallest distance of any relevant sample coordinate to a kernel breakpoint.

    Breakpoints sit at integer offsets (fractional part 0); used by the
    gradient tests to exclude non-differentiable configurations. Irrelevant
    samples are skipped: zero-radius columns (their position never moves with
    the angles) and samples more than a pixel away from the raster on any
    side (their value is pinned at 0 on both sides of any nearby breakpoint).
    """
    h, w = image_shape
    xt, yt = _to_pixel(grid, h, w)
    keep = ((grid.radius > 0.0)[None, :]
            & (xt > -2.0) & (xt < w + 1.0)
            & (yt > -2.0) & (yt < h + 1.0))
    if not keep.any():
        return np.inf
    fx = xt[keep] - np.floor(xt[keep])
    fy = yt[keep] - np.floor(yt[keep])
    d = np.minimum(np.minimum(fx, 1.0 - fx), np.minimum(fy, 1.0 - fy))
    return float(d.min())


def z_jacobian(lam):
    """dz_i/dlambda_k as an (N, N) matrix (three-case positive-part rule)."""
    n = lam.size
    clipped = np.maximum(lam, 0.0)
    total = clipped.sum()
    if total <= DEGENERATE_EPS:
        raise DegenerateParameterError("all angle weights non-positive")
    prefix = np.cumsum(clipped)
    jac = np.zeros((n, n), dtype=np.float64)
    inv_t2 = 1.0 / (total * total)
    for k in range(n):
        if lam[k] <= 0.0:
            continue
        jac[k:, k] = (total - prefix[k:]) * inv_t2
        jac[:k, k] = -prefix[:k] * inv_t2
    return jac


def z_backward(lam, upstream_z):
    """Accumulate dL/dlambda from dL/dz without forming the Jacobian."""
    n = lam.size
    clipped = np.maximum(lam, 0.0)
    total = clipped.sum()
    if total <= DEGENERATE_EPS:
        raise DegenerateParameterError("all angle weights non-positive")
    prefix = np.cumsum(clipped)
    # dL/dlam_k = [sum_{i>=k} u_i (T - P_i) - sum_{i<k} u_i P_i] / T^2, lam_k > 0.
    up = upstream_z * (total - prefix)        # terms for i >= k
    um = upstream_z * prefix                  # terms for i < k
    suffix_up = np.cumsum(up[::-1])[::-1]
    prefix_um = np.concatenate(([0.0], np.cumsum(um)[:-1]))
    grad = (suffix_up - prefix_um) / (total * total)
    grad[lam <= 0.0] = 0.0
    return grad

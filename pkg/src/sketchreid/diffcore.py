"""Forward/backward primitives, the SGD step, and the finite-difference checker.

Tensors are plain float64 numpy arrays (row-major). Every forward has an
explicit backward; nothing here builds a graph.
"""

from dataclasses import dataclass, field

import numpy as np

from sketchreid import backend
from sketchreid.errors import ContractViolation, GradcheckError

SIGMOID_CLAMP = 40.0


def pad2d(x, pad):
    """Zero-pad the two spatial axes of a (C, H, W) tensor."""
    if pad == 0:
        return np.ascontiguousarray(x)
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    out[:, pad:pad + h, pad:pad + w] = x
    return out


def conv2d(x, kernels, stride=1, pad=0):
    """2-D convolution of (C_in, H, W) with (C_out, C_in, k, k), zero padding."""
    if x.ndim != 3 or kernels.ndim != 4:
        raise ContractViolation("conv2d expects (C,H,W) input and (O,C,k,k) kernels")
    if x.shape[0] != kernels.shape[1]:
        raise ContractViolation(
            f"input channels {x.shape[0]} != kernel channels {kernels.shape[1]}")
    k = kernels.shape[2]
    if x.shape[1] + 2 * pad < k or x.shape[2] + 2 * pad < k:
        raise ContractViolation("padded input smaller than kernel")
    xp = pad2d(x, pad)
    return backend.conv2d_forward(xp, np.ascontiguousarray(kernels), stride)


def conv2d_backward(x, kernels, upstream, stride=1, pad=0):
    """Returns (d_kernels, d_input) for conv2d."""
    k = kernels.shape[2]
    h_out = (x.shape[1] + 2 * pad - k) // stride + 1
    w_out = (x.shape[2] + 2 * pad - k) // stride + 1
    if upstream.shape != (kernels.shape[0], h_out, w_out):
        raise ContractViolation(
            f"upstream shape {upstream.shape} != forward output "
            f"{(kernels.shape[0], h_out, w_out)}")
    xp = pad2d(x, pad)
    d_kernels, d_xp = backend.conv2d_backward(
        xp, np.ascontiguousarray(kernels), np.ascontiguousarray(upstream), stride)
    if pad:
        d_x = d_xp[:, pad:pad + x.shape[1], pad:pad + x.shape[2]]
    else:
        d_x = d_xp
    return d_kernels, np.ascontiguousarray(d_x)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    # Subgradient 0 at x == 0.
    return np.where(x > 0, upstream, 0.0)


def sigmoid(x):
    z = np.clip(x, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-z))


def sigmoid_backward(x, upstream):
    s = sigmoid(x)
    return upstream * s * (1.0 - s)


def linear(x, w, b):
    """w @ x + b for a vector x."""
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise ContractViolation(
            f"linear dims disagree: W {w.shape}, x {x.shape}, b {b.shape}")
    return w @ x + b


def linear_backward(x, w, upstream):
    """Returns (dW, db, dx)."""
    return np.outer(upstream, x), upstream.copy(), w.T @ upstream


def stripe_avgpool(fmap, n_stripes):
    """Average (C, Hf, Wf) over B equal horizontal bands -> list of B (C,) vectors."""
    c, hf, wf = fmap.shape
    if hf % n_stripes != 0:
        raise ContractViolation(f"feature height {hf} not divisible by {n_stripes} stripes")
    rows = hf // n_stripes
    return [fmap[:, j * rows:(j + 1) * rows, :].mean(axis=(1, 2))
            for j in range(n_stripes)]


def stripe_avgpool_backward(fmap_shape, n_stripes, upstream_vectors):
    """Spread each stripe-vector gradient uniformly over its pooled region."""
    c, hf, wf = fmap_shape
    rows = hf // n_stripes
    d_fmap = np.empty(fmap_shape, dtype=np.float64)
    scale = 1.0 / (rows * wf)
    for j, g in enumerate(upstream_vectors):
        d_fmap[:, j * rows:(j + 1) * rows, :] = (g * scale)[:, None, None]
    return d_fmap


@dataclass
class OptimState:
    """Classic momentum SGD with weight decay folded into the gradient.

    lr_overrides maps exact parameter names to their own learning rate
    (the angle weights train much slower than the network).
    """
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    lr_overrides: dict = field(default_factory=dict)
    velocity: dict = field(default_factory=dict)

    def lr_for(self, name):
        return self.lr_overrides.get(name, self.lr)


def sgd_step(params, grads, state):
    """v <- momentum*v + grad + wd*param; param <- param - lr*v (in place).

    Parameters whose name is missing from grads are left untouched
    (velocity included), which is how the trainer freezes them.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractViolation(f"grad shape {g.shape} != param shape {p.shape} for {name}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocity[name] = v
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p
        p -= state.lr_for(name) * v


@dataclass
class GradcheckReport:
    max_rel_error: float
    per_param: dict
    tolerance: float
    worst: tuple

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.1e}) worst at {self.worst}")


def _rel_err(a, b):
    return abs(a - b) / max(1.0, abs(a), abs(b))


def finite_diff_gradcheck(op_closure, params, step=1e-4, tolerance=1e-5, steps=None):
    """Central-difference check of analytic gradients.

    op_closure() -> (scalar loss, {name: grad}) evaluated at the current
    params; this function perturbs params in place coordinate by coordinate.
    steps optionally overrides the step size per parameter name.
    """
    loss0, grads = op_closure()
    if not np.isfinite(loss0):
        raise GradcheckError(f"non-finite loss {loss0} at the expansion point")
    max_err = 0.0
    per_param = {}
    worst = ("", -1)
    for name, p in params.items():
        if name not in grads:
            continue
        h = steps.get(name, step) if steps else step
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        p_err = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = op_closure()
            flat[i] = orig - h
            lm, _ = op_closure()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise GradcheckError(f"non-finite loss while perturbing {name}[{i}]")
            fd = (lp - lm) / (2.0 * h)
            err = _rel_err(fd, gflat[i])
            if err > p_err:
                p_err = err
            if err > max_err:
                max_err = err
                worst = (name, i)
        per_param[name] = p_err
    return GradcheckReport(max_err, per_param, tolerance, worst)

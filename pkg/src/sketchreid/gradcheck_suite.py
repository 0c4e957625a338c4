"""Micro-scale gradient-fidelity suite behind the gradcheck CLI command.

Each scope draws seeded random instances, re-drawing until the configuration
sits safely away from the non-differentiable kinks (relu zeros, bilinear
kernel breakpoints, the triplet hinge), then compares analytic gradients
against central finite differences.
"""

from dataclasses import dataclass

import numpy as np

from sketchreid import spt
from sketchreid.ase import ase_backward, ase_forward, ase_init
from sketchreid.diffcore import (conv2d, conv2d_backward, finite_diff_gradcheck,
                                 linear, linear_backward, relu, relu_backward,
                                 sigmoid, sigmoid_backward, stripe_avgpool,
                                 stripe_avgpool_backward)
from sketchreid.errors import ConfigError
from sketchreid.losses import (LossWeights, cross_entropy, cross_entropy_logit_grad,
                               softmax, triplet_margin, triplet_margin_backward)
from sketchreid.network import NetworkConfig, build_model, forward_full
from sketchreid.trainer import triplet_loss_and_grads

SCOPES = ("core", "spt", "ase", "losses", "model")

# max_radius 1.9 keeps the radius-1 ring clear of the raster edge, where
# exact tangency would pin samples to integer coordinates near the axes.
MICRO_NET = NetworkConfig(n_classes=2, n_stripes=2, stages=(2, 2), input_side=16,
                          n_angles=8, n_radii=8, max_radius=1.9)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool

    def line(self):
        word = "PASS" if self.passed else "FAIL"
        return (f"{word} {self.name}: max rel err {self.max_rel_error:.3e} "
                f"(tol {self.tolerance:.1e})")


def _result(name, report):
    return CheckResult(name, report.max_rel_error, report.tolerance, report.passed)


def model_fd_margins(model, images):
    """Smallest distances to the kinks along the composed forward pass.

    Exact-zero pre-activations come from structurally dead regions (windows
    of out-of-raster polar samples); they cannot move under perturbation, so
    only nonzero values count.
    """
    def min_nonzero_abs(arr, current):
        a = np.abs(arr[arr != 0.0])
        return min(current, float(a.min())) if a.size else current

    min_pre = np.inf
    min_ase = np.inf
    min_break = np.inf
    for img in images:
        _, cache = forward_full(model, img, want_cache=True)
        for sc in cache.streams:
            for pre in sc.conv_pre:
                min_pre = min_nonzero_abs(pre, min_pre)
            for ac in sc.ase_caches:
                if ac is not None:
                    min_ase = min_nonzero_abs(ac.pre_reduce, min_ase)
            if sc.grid is not None:
                # the last grid row is pinned at angle b: insensitive to lambda
                sub = type(sc.grid)(xs=sc.grid.xs[:-1], ys=sc.grid.ys[:-1],
                                    theta=sc.grid.theta[:-1], radius=sc.grid.radius)
                min_break = min(min_break,
                                spt.min_breakpoint_distance(img.shape, sub))
    return min_pre, min_ase, min_break


def find_safe_micro_setup(base_seed, config=MICRO_NET, attempts=60):
    """Model plus a triplet of images whose kink margins admit differencing."""
    for attempt in range(attempts):
        seed = base_seed * 997 + attempt
        model = build_model(config, seed)
        rng = np.random.default_rng(seed + 1)
        for s in model.streams:
            s.spt_lambda[:] = 0.05 + 0.02 * rng.random(config.n_angles)
        imgs = [rng.random((config.input_side, config.input_side)) for _ in range(3)]
        pre, ase_pre, brk = model_fd_margins(model, imgs)
        if pre > 1e-3 and ase_pre > 1e-3 and brk > 1e-3:
            return model, imgs
    raise ConfigError("no kink-safe micro setup found")


# -- scope runners ------------------------------------------------------------

def _check_conv(seed, sign):
    rng = np.random.default_rng(seed)
    x = rng.random((2, 6, 6))
    k = rng.standard_normal((3, 2, 3, 3)) * 0.5
    up = rng.standard_normal((3, 3, 3))
    params = {"x": x, "k": k}

    def closure():
        out = conv2d(x, k, stride=2, pad=1)
        dk, dx = conv2d_backward(x, k, up, stride=2, pad=1)
        return float((out * up).sum()), {"x": sign * dx, "k": sign * dk}

    return finite_diff_gradcheck(closure, params, step=1e-4, tolerance=1e-5)


def _check_linear(seed, sign):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(6)
    w = rng.standard_normal((4, 6))
    b = rng.standard_normal(4)
    up = rng.standard_normal(4)
    params = {"x": x, "w": w, "b": b}

    def closure():
        dw, db, dx = linear_backward(x, w, up)
        return float((linear(x, w, b) * up).sum()), {"x": sign * dx,
                                                     "w": sign * dw, "b": sign * db}

    return finite_diff_gradcheck(closure, params, step=1e-4, tolerance=1e-5)


def _check_relu(seed, sign):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(24)
    x[np.abs(x) < 0.05] += 0.1
    up = rng.standard_normal(24)

    def closure():
        return float((relu(x) * up).sum()), {"x": sign * relu_backward(x, up)}

    return finite_diff_gradcheck(closure, {"x": x}, step=1e-4, tolerance=1e-5)


def _check_sigmoid(seed, sign):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(24) * 3
    up = rng.standard_normal(24)

    def closure():
        return float((sigmoid(x) * up).sum()), {"x": sign * sigmoid_backward(x, up)}

    return finite_diff_gradcheck(closure, {"x": x}, step=1e-4, tolerance=1e-5)


def _check_stripes(seed, sign):
    rng = np.random.default_rng(seed)
    fmap = rng.random((3, 6, 4))
    ups = [rng.standard_normal(3) for _ in range(3)]

    def closure():
        vs = stripe_avgpool(fmap, 3)
        loss = float(sum((v * u).sum() for v, u in zip(vs, ups)))
        return loss, {"fmap": sign * stripe_avgpool_backward(fmap.shape, 3, ups)}

    return finite_diff_gradcheck(closure, {"fmap": fmap}, step=1e-4, tolerance=1e-5)


def _check_spt_theta(seed, sign):
    rng = np.random.default_rng(seed)
    img = rng.random((16, 16))
    cfg = spt.SptConfig(n_angles=6, n_radii=5, max_radius=1.37)
    wide = spt.SptConfig(n_angles=6, n_radii=5, max_radius=1.37,
                         angle_start=np.pi + 0.01, angle_end=-np.pi - 0.01)
    theta = None
    for _ in range(300):
        z = spt.lambda_to_z(rng.random(6) + 0.05)
        cand = spt.z_to_theta(z, cfg.angle_start, cfg.angle_end)
        if spt.min_breakpoint_distance(img.shape, spt.build_grid(cand, cfg)) > 1e-3:
            theta = cand
            break
    if theta is None:
        raise ConfigError("no breakpoint-safe theta found")
    up = rng.standard_normal((6, 5))

    def closure():
        grid = spt.build_grid(theta, wide)
        v = spt.spt_forward(img, grid)
        d_theta = spt.spt_backward(img, grid, theta, up)
        return float((v * up).sum()), {"theta": sign * d_theta}

    return finite_diff_gradcheck(closure, {"theta": theta}, step=1e-5, tolerance=1e-4)


def _check_spt_lambda(seed, sign):
    rng = np.random.default_rng(seed)
    lam = rng.random(8) * 0.3 + 0.02   # entries > 1e-4: off the clamp kink
    lam[rng.integers(8)] = -0.05       # exercise the clamped branch
    up = rng.standard_normal(8)

    def closure():
        z = spt.lambda_to_z(lam)
        return float((z * up).sum()), {"lam": sign * spt.z_backward(lam, up)}

    return finite_diff_gradcheck(closure, {"lam": lam}, step=1e-7, tolerance=1e-6)


def _check_ase(seed, sign):
    rng = np.random.default_rng(seed)
    p = ase_init(8, 2, seed)
    a = rng.standard_normal(8)
    while np.abs(p.w @ a).min() < 1e-3:
        a = rng.standard_normal(8)
    up = rng.standard_normal(8)
    params = {"w": p.w, "q": p.q, "aw": p.adapter_w, "ab": p.adapter_b, "a": a}

    def closure():
        out, cache = ase_forward(a, p, want_cache=True)
        grads, d_a = ase_backward(cache, p, up)
        return float((out * up).sum()), {
            "w": sign * grads["w"], "q": sign * grads["q"],
            "aw": sign * grads["adapter_w"], "ab": sign * grads["adapter_b"],
            "a": sign * d_a}

    return finite_diff_gradcheck(closure, params, step=1e-6, tolerance=1e-5)


def _check_softmax_ce(seed, sign):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(5) * 2
    target = int(rng.integers(5))

    def closure():
        prob = softmax(logits)
        return float(cross_entropy(prob, target)), {
            "logits": sign * cross_entropy_logit_grad(prob, target)}

    return finite_diff_gradcheck(closure, {"logits": logits}, step=1e-6,
                                 tolerance=1e-6)


def _check_triplet(seed, sign):
    rng = np.random.default_rng(seed)
    m = 5.0
    while True:
        a, p, n = (rng.standard_normal(6) for _ in range(3))
        hinge = m + np.linalg.norm(a - p) - np.linalg.norm(a - n)
        if abs(hinge) > 1e-2 and np.linalg.norm(a - p) > 1e-2:
            break

    def closure():
        _, da, dp, dn = triplet_margin_backward(a, p, n, m)
        return triplet_margin(a, p, n, m), {"a": sign * da, "p": sign * dp,
                                            "n": sign * dn}

    return finite_diff_gradcheck(closure, {"a": a, "p": p, "n": n}, step=1e-6,
                                 tolerance=1e-5)


def _check_model(seed, sign):
    model, (ia, ip, inn) = find_safe_micro_setup(seed)
    weights = LossWeights(margin=5.0, eta=10.0)
    params = model.param_dict()

    def closure():
        grads = {}
        total, _, _, _ = triplet_loss_and_grads(model, ia, ip, inn, 1, weights,
                                                grads, with_lambda_grad=True)
        if sign < 0:
            grads = {k: -v for k, v in grads.items()}
        return total, grads

    steps = {name: 1e-6 for name in model.lambda_names()}
    return finite_diff_gradcheck(closure, params, step=1e-5, tolerance=1e-4,
                                 steps=steps)


_SCOPE_CHECKS = {
    "core": [("conv2d", _check_conv), ("linear", _check_linear),
             ("relu", _check_relu), ("sigmoid", _check_sigmoid),
             ("stripe_avgpool", _check_stripes)],
    "spt": [("spt_theta", _check_spt_theta), ("spt_lambda", _check_spt_lambda)],
    "ase": [("ase", _check_ase)],
    "losses": [("softmax_ce", _check_softmax_ce), ("triplet", _check_triplet)],
    "model": [("micro_model", _check_model)],
}


def run_suite(scope="all", seeds=5, inject_error=False):
    """Run the selected scope(s); returns a list of CheckResult."""
    if scope == "all":
        names = list(SCOPES)
    elif scope in _SCOPE_CHECKS:
        names = [scope]
    else:
        raise ConfigError(f"unknown gradcheck scope {scope!r}")
    sign = -1.0 if inject_error else 1.0
    results = []
    for scope_name in names:
        for check_name, fn in _SCOPE_CHECKS[scope_name]:
            worst = None
            for seed in range(seeds):
                report = fn(seed, sign)
                if worst is None or report.max_rel_error > worst.max_rel_error:
                    worst = report
            results.append(_result(f"{scope_name}.{check_name}", worst))
    return results

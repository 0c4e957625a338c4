"""Multistream model: per-stream polar transform, conv backbone, stripe pooling,
per-branch gating and classifier heads, concatenated identity feature.

Streams and branches share structure but never parameters. All forward passes
are pure; parameter mutation happens only in the optimizer.
"""

from dataclasses import dataclass, field

import numpy as np

from sketchreid import spt
from sketchreid.ase import AseParams, ase_backward, ase_forward, ase_init, glorot_uniform
from sketchreid.diffcore import (conv2d, conv2d_backward, linear, relu, relu_backward,
                                 stripe_avgpool, stripe_avgpool_backward)
from sketchreid.errors import ConfigError
from sketchreid.losses import softmax

DEFAULT_STREAM_RANGES = (
    (np.pi, -np.pi),
    (-np.pi / 4, -3 * np.pi / 4),
    (3 * np.pi / 4, np.pi / 4),
)


def _conv_out_side(side, n_stages):
    for _ in range(n_stages):
        side = (side - 1) // 2 + 1
    return side


@dataclass(frozen=True)
class NetworkConfig:
    n_classes: int
    stream_ranges: tuple = DEFAULT_STREAM_RANGES
    n_stripes: int = 7
    stages: tuple = (32, 64, 128)
    input_side: int = 56
    n_angles: int = 56
    n_radii: int = 56
    max_radius: float = 2.0
    reduction: int = 2
    with_spt: bool = True
    with_ase: bool = True

    @property
    def embed_width(self):
        return self.stages[-1]

    @property
    def n_streams(self):
        return len(self.stream_ranges) if self.with_spt else 1

    @property
    def n_branches(self):
        return self.n_streams * self.n_stripes

    def backbone_input_side(self):
        return self.n_angles if self.with_spt else self.input_side

    def feature_side(self):
        return _conv_out_side(self.backbone_input_side(), len(self.stages))

    def validate(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 identity classes")
        fs = self.feature_side()
        if fs % self.n_stripes != 0:
            raise ConfigError(
                f"feature height {fs} not divisible by stripe count {self.n_stripes} "
                f"(input side {self.backbone_input_side()}, {len(self.stages)} stages)")
        if self.embed_width % self.reduction != 0:
            raise ConfigError(
                f"embed width {self.embed_width} not divisible by reduction {self.reduction}")


@dataclass
class BranchParams:
    ase: AseParams
    head_w: np.ndarray
    head_b: np.ndarray


@dataclass
class StreamParams:
    spt_lambda: np.ndarray  # None when the model has no polar transform
    convs: list
    branches: list


@dataclass
class ModelParams:
    config: NetworkConfig
    streams: list = field(default_factory=list)

    def named_parameters(self):
        """(name, array) pairs in declaration order; checkpoint/SGD order."""
        out = []
        for i, s in enumerate(self.streams):
            if s.spt_lambda is not None:
                out.append((f"stream{i}.lambda", s.spt_lambda))
            for k, kern in enumerate(s.convs):
                out.append((f"stream{i}.conv{k}", kern))
            for j, br in enumerate(s.branches):
                if br.ase is not None:
                    out.append((f"stream{i}.branch{j}.ase_w", br.ase.w))
                    out.append((f"stream{i}.branch{j}.ase_q", br.ase.q))
                    out.append((f"stream{i}.branch{j}.ase_aw", br.ase.adapter_w))
                    out.append((f"stream{i}.branch{j}.ase_ab", br.ase.adapter_b))
                out.append((f"stream{i}.branch{j}.head_w", br.head_w))
                out.append((f"stream{i}.branch{j}.head_b", br.head_b))
        return out

    def param_dict(self):
        return dict(self.named_parameters())

    def lambda_names(self):
        return [f"stream{i}.lambda" for i, s in enumerate(self.streams)
                if s.spt_lambda is not None]

    def spt_config(self, i):
        a, b = self.config.stream_ranges[i]
        return spt.SptConfig(
            n_angles=self.config.n_angles, n_radii=self.config.n_radii,
            max_radius=self.config.max_radius, angle_start=a, angle_end=b)


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(config, seed):
    config.validate()
    rng = np.random.default_rng(seed)
    model = ModelParams(config=config)
    l = config.embed_width
    for _ in range(config.n_streams):
        lam = spt.init_lambda(config.n_angles) if config.with_spt else None
        convs = []
        c_in = 1
        for width in config.stages:
            convs.append(_he_uniform(rng, (width, c_in, 3, 3), c_in * 9))
            c_in = width
        branches = []
        for _ in range(config.n_stripes):
            ase_params = (ase_init(l, config.reduction, int(rng.integers(2 ** 63)))
                          if config.with_ase else None)
            branches.append(BranchParams(
                ase=ase_params,
                head_w=glorot_uniform(rng, config.n_classes, l),
                head_b=np.zeros(config.n_classes, dtype=np.float64),
            ))
        model.streams.append(StreamParams(spt_lambda=lam, convs=convs, branches=branches))
    return model


@dataclass
class StreamCache:
    theta: np.ndarray
    grid: object
    transformed: np.ndarray
    conv_inputs: list
    conv_pre: list
    fmap_shape: tuple
    ase_caches: list
    pooled: list
    branch_feats: list


@dataclass
class ForwardCache:
    image: np.ndarray
    streams: list


def forward_full(model, image, want_cache=False):
    """Run all streams; returns (branch feature list, cache or None).

    Branch features are ordered stream-major, branch-minor; their
    concatenation is the identity feature.
    """
    cfg = model.config
    caches = []
    feats = []
    for i, s in enumerate(model.streams):
        if cfg.with_spt:
            z = spt.lambda_to_z(s.spt_lambda)
            a, b = cfg.stream_ranges[i]
            theta = spt.z_to_theta(z, a, b)
            grid = spt.build_grid(theta, model.spt_config(i))
            v = spt.spt_forward(image, grid)
        else:
            theta, grid, v = None, None, image
        x = v[None, :, :]
        conv_inputs, conv_pre = [], []
        for kern in s.convs:
            conv_inputs.append(x)
            pre = conv2d(x, kern, stride=2, pad=1)
            conv_pre.append(pre)
            x = relu(pre)
        fmap = x
        pooled = stripe_avgpool(fmap, cfg.n_stripes)
        ase_caches, branch_feats = [], []
        for j, br in enumerate(s.branches):
            if br.ase is not None:
                feat, c = ase_forward(pooled[j], br.ase, want_cache=True)
                ase_caches.append(c)
            else:
                feat = pooled[j]
                ase_caches.append(None)
            branch_feats.append(feat)
        feats.extend(branch_feats)
        if want_cache:
            caches.append(StreamCache(
                theta=theta, grid=grid, transformed=v,
                conv_inputs=conv_inputs, conv_pre=conv_pre,
                fmap_shape=fmap.shape, ase_caches=ase_caches,
                pooled=pooled, branch_feats=branch_feats))
    return feats, (ForwardCache(image=image, streams=caches) if want_cache else None)


def forward_features(model, image):
    """Concatenated identity feature plus the per-branch vectors."""
    feats, _ = forward_full(model, image)
    return np.concatenate(feats), feats


def forward_logits(model, image):
    """Per-branch class probability vectors (softmax over head logits)."""
    feats, _ = forward_full(model, image)
    probs = []
    idx = 0
    for s in model.streams:
        for br in s.branches:
            probs.append(softmax(linear(feats[idx], br.head_w, br.head_b)))
            idx += 1
    return probs


def backward_full(model, cache, branch_grads, grads_out, with_lambda_grad=True):
    """Backprop per-branch feature gradients into grads_out (accumulating).

    branch_grads: one (L,) gradient per branch, stream-major order — the
    sum of head contributions and the triplet slice, already combined by
    the caller.
    """
    cfg = model.config
    idx = 0
    for i, s in enumerate(model.streams):
        sc = cache.streams[i]
        d_pooled = []
        for j, br in enumerate(s.branches):
            g = branch_grads[idx]
            idx += 1
            if br.ase is not None:
                ase_grads, d_a = ase_backward(sc.ase_caches[j], br.ase, g)
                prefix = f"stream{i}.branch{j}."
                _acc(grads_out, prefix + "ase_w", ase_grads["w"])
                _acc(grads_out, prefix + "ase_q", ase_grads["q"])
                _acc(grads_out, prefix + "ase_aw", ase_grads["adapter_w"])
                _acc(grads_out, prefix + "ase_ab", ase_grads["adapter_b"])
            else:
                d_a = g
            d_pooled.append(d_a)
        d = stripe_avgpool_backward(sc.fmap_shape, cfg.n_stripes, d_pooled)
        for k in reversed(range(len(s.convs))):
            d_pre = relu_backward(sc.conv_pre[k], d)
            d_kern, d = conv2d_backward(sc.conv_inputs[k], s.convs[k], d_pre,
                                        stride=2, pad=1)
            _acc(grads_out, f"stream{i}.conv{k}", d_kern)
        if cfg.with_spt and with_lambda_grad:
            d_v = d[0]
            d_theta = spt.spt_backward(cache.image, sc.grid, sc.theta, d_v)
            a, b = cfg.stream_ranges[i]
            d_z = d_theta * (b - a)
            d_lam = spt.z_backward(s.spt_lambda, d_z)
            _acc(grads_out, f"stream{i}.lambda", d_lam)


def _acc(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def parameter_count(model):
    return sum(p.size for _, p in model.named_parameters())

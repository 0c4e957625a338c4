"""Angle-specific extractor: channel gate with residual reweighting + adapter.

For a pooled stripe vector a: d = sigmoid(Q relu(W a)), o = a + a*d, then a
square linear adapter maps o to the branch feature. W and Q carry no bias;
each (stream, branch) pair owns an independent set of parameters.
"""

from dataclasses import dataclass

import numpy as np

from sketchreid.diffcore import linear, linear_backward, relu, relu_backward, sigmoid
from sketchreid.errors import ConfigError, ContractViolation


@dataclass
class AseParams:
    w: np.ndarray        # (L/r, L) reduction
    q: np.ndarray        # (L, L/r) expansion
    adapter_w: np.ndarray  # (L, L)
    adapter_b: np.ndarray  # (L,)


def glorot_uniform(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def ase_init(l, r, seed):
    if l % r != 0:
        raise ConfigError(f"channel count {l} not divisible by reduction ratio {r}")
    rng = np.random.default_rng(seed)
    return AseParams(
        w=glorot_uniform(rng, l // r, l),
        q=glorot_uniform(rng, l, l // r),
        adapter_w=glorot_uniform(rng, l, l),
        adapter_b=np.zeros(l, dtype=np.float64),
    )


@dataclass
class AseCache:
    a: np.ndarray
    pre_reduce: np.ndarray
    hidden: np.ndarray
    gate: np.ndarray
    reweighted: np.ndarray


def ase_forward(a, params, want_cache=False):
    if a.shape[0] != params.w.shape[1]:
        raise ContractViolation(
            f"input length {a.shape[0]} != gate width {params.w.shape[1]}")
    pre = params.w @ a
    hidden = relu(pre)
    gate = sigmoid(params.q @ hidden)
    o = a + a * gate
    out = linear(o, params.adapter_w, params.adapter_b)
    if want_cache:
        return out, AseCache(a=a, pre_reduce=pre, hidden=hidden, gate=gate, reweighted=o)
    return out


def ase_backward(cache, params, upstream):
    """Returns ({'w','q','adapter_w','adapter_b'} grads, d_input)."""
    d_aw, d_ab, d_o = linear_backward(cache.reweighted, params.adapter_w, upstream)
    d_a = d_o * (1.0 + cache.gate)
    d_gate = d_o * cache.a
    s = cache.gate
    d_pre_expand = d_gate * s * (1.0 - s)
    d_q = np.outer(d_pre_expand, cache.hidden)
    d_hidden = params.q.T @ d_pre_expand
    d_pre_reduce = relu_backward(cache.pre_reduce, d_hidden)
    d_w = np.outer(d_pre_reduce, cache.a)
    d_a += params.w.T @ d_pre_reduce
    grads = {"w": d_w, "q": d_q, "adapter_w": d_aw, "adapter_b": d_ab}
    return grads, d_a

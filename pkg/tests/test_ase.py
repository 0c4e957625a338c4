import numpy as np
import pytest

from oracles import central_diff, max_rel_err
from sketchreid.ase import AseParams, ase_backward, ase_forward, ase_init
from sketchreid.errors import ConfigError, ContractViolation


def identity_adapter(l):
    return np.eye(l), np.zeros(l)


def direct_oracle(a, p):
    """Straight-line recomputation of gate -> residual -> adapter."""
    d = 1.0 / (1.0 + np.exp(-(p.q @ np.maximum(p.w @ a, 0.0))))
    o = a + a * d
    return p.adapter_w @ o + p.adapter_b


class TestForward:
    def test_zero_gate_weights(self):
        l = 6
        aw, ab = identity_adapter(l)
        p = AseParams(w=np.zeros((3, l)), q=np.zeros((l, 3)), adapter_w=aw, adapter_b=ab)
        a = np.arange(1.0, l + 1)
        out = ase_forward(a, p)
        assert np.allclose(out, 1.5 * a, atol=0, rtol=0)

    def test_zero_input_gives_adapter_bias(self):
        l = 4
        rng = np.random.default_rng(0)
        p = ase_init(l, 2, 7)
        p.adapter_b = rng.standard_normal(l)
        out = ase_forward(np.zeros(l), p)
        assert np.array_equal(out, p.adapter_b)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_oracle(self, seed):
        rng = np.random.default_rng(seed)
        p = ase_init(8, 2, seed)
        a = rng.standard_normal(8)
        assert np.allclose(ase_forward(a, p), direct_oracle(a, p), atol=1e-12, rtol=0)

    def test_dim_mismatch(self):
        p = ase_init(8, 2, 0)
        with pytest.raises(ContractViolation):
            ase_forward(np.zeros(5), p)

    @pytest.mark.parametrize("seed", range(5))
    def test_gate_range_and_sign(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = ase_init(8, 2, seed)
        p.adapter_w, p.adapter_b = identity_adapter(8)
        a = rng.standard_normal(8)
        out = ase_forward(a, p)
        ratio = out[a != 0] / a[a != 0]
        assert np.all(ratio > 1.0) and np.all(ratio < 2.0)
        assert np.all(np.sign(out) == np.sign(a))


class TestBackward:
    def test_zero_upstream(self):
        p = ase_init(8, 2, 1)
        a = np.random.default_rng(2).standard_normal(8)
        _, cache = ase_forward(a, p, want_cache=True)
        grads, d_a = ase_backward(cache, p, np.zeros(8))
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(d_a == 0)

    def test_frozen_gate_input_grad(self):
        l = 6
        rng = np.random.default_rng(3)
        adapter = rng.standard_normal((l, l))
        p = AseParams(w=np.zeros((3, l)), q=np.zeros((l, 3)),
                      adapter_w=adapter, adapter_b=np.zeros(l))
        a = rng.standard_normal(l)
        up = rng.standard_normal(l)
        _, cache = ase_forward(a, p, want_cache=True)
        _, d_a = ase_backward(cache, p, up)
        assert np.allclose(d_a, 1.5 * adapter.T @ up, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck_all_params_and_input(self, seed):
        rng = np.random.default_rng(10 + seed)
        p = ase_init(8, 2, 1000 + seed)
        a = rng.standard_normal(8)
        # keep the relu inputs away from the kink
        while np.abs(p.w @ a).min() < 1e-3:
            a = rng.standard_normal(8)
        up = rng.standard_normal(8)

        def loss():
            return float((ase_forward(a, p) * up).sum())

        _, cache = ase_forward(a, p, want_cache=True)
        grads, d_a = ase_backward(cache, p, up)
        assert max_rel_err(central_diff(loss, p.w, 1e-6), grads["w"]) < 1e-6
        assert max_rel_err(central_diff(loss, p.q, 1e-6), grads["q"]) < 1e-6
        assert max_rel_err(central_diff(loss, p.adapter_w, 1e-6), grads["adapter_w"]) < 1e-6
        assert max_rel_err(central_diff(loss, p.adapter_b, 1e-6), grads["adapter_b"]) < 1e-6
        assert max_rel_err(central_diff(loss, a, 1e-6), d_a) < 1e-6


class TestInit:
    def test_deterministic(self):
        p1, p2 = ase_init(8, 2, 42), ase_init(8, 2, 42)
        assert np.array_equal(p1.w, p2.w) and np.array_equal(p1.q, p2.q)
        assert np.array_equal(p1.adapter_w, p2.adapter_w)

    def test_shapes(self):
        p = ase_init(8, 2, 0)
        assert p.w.shape == (4, 8) and p.q.shape == (8, 4)
        assert p.adapter_w.shape == (8, 8) and p.adapter_b.shape == (8,)

    def test_indivisible_raises(self):
        with pytest.raises(ConfigError):
            ase_init(9, 2, 0)

    def test_entry_mean_within_three_sigma(self):
        vals = np.concatenate([ase_init(8, 2, s).w.reshape(-1) for s in range(125)])
        n = vals.size  # 1000 entries of U(-b, b), b = sqrt(6/12)
        bound = np.sqrt(6.0 / 12.0)
        sigma_mean = bound / np.sqrt(3.0) / np.sqrt(n)
        assert abs(vals.mean()) < 3.0 * sigma_mean

    def test_unshared_branches_independent(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal(8)
        p1, p2 = ase_init(8, 2, 1), ase_init(8, 2, 2)
        out2_before = ase_forward(a, p2)
        p1.w[:] = 0.0  # mutate branch 1
        assert np.array_equal(ase_forward(a, p2), out2_before)

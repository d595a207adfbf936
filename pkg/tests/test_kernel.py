"""Kernel tests: linear layers, GeLU, dropout, MSE, AdamW, RNG determinism.

Every backward is checked against central finite differences of its own
forward; matmul and the loss are additionally checked against naive-loop
oracles.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmreg.errors import ConfigError, ShapeError
from mmreg.kernel import (AdamWConfig, AdamWState, LinearParams, adamw_step,
                          apply_dropout_mask, dropout, dropout_backward, gelu,
                          gelu_backward, linear_backward, linear_forward,
                          make_rng, matrix, mse_loss, spawn_rngs)

from conftest import numerical_grad, rel_err


def naive_matmul(x, w):
    out = np.zeros((x.shape[0], w.shape[1]))
    for i in range(x.shape[0]):
        for j in range(w.shape[1]):
            acc = 0.0
            for k in range(x.shape[1]):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


class TestMatrix:
    def test_rejects_nan_in_checked_mode(self):
        with pytest.raises(ShapeError):
            matrix([[1.0, np.nan]])

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            matrix([1.0, 2.0, 3.0])


class TestLinear:
    def test_identity_weights(self):
        p = LinearParams(weight=np.eye(2), bias=np.zeros(2))
        out = linear_forward(np.array([[1.0, 2.0]]), p)
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_hand_sum(self):
        p = LinearParams(weight=np.array([[2.0], [3.0]]), bias=np.array([-5.0]))
        out = linear_forward(np.array([[1.0, 1.0]]), p)
        np.testing.assert_array_equal(out, [[0.0]])

    def test_matches_triple_loop_oracle(self, rng):
        x = rng.normal(size=(3, 4))
        p = LinearParams(weight=rng.normal(size=(4, 2)), bias=rng.normal(size=2))
        expected = naive_matmul(x, p.weight) + p.bias
        np.testing.assert_allclose(linear_forward(x, p), expected, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 32),
           st.integers(0, 2**32 - 1))
    def test_matmul_oracle_up_to_32(self, n, k, m, seed):
        r = np.random.default_rng(seed)
        x, w = r.normal(size=(n, k)), r.normal(size=(k, m))
        p = LinearParams(weight=w, bias=None)
        np.testing.assert_allclose(linear_forward(x, p), naive_matmul(x, w),
                                   rtol=1e-12, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        p = LinearParams(weight=np.zeros((4, 2)), bias=None)
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            linear_forward(np.zeros((2, 3)), p)

    def test_zero_grad_out(self, rng):
        x = rng.normal(size=(3, 4))
        p = LinearParams(weight=rng.normal(size=(4, 2)), bias=np.zeros(2))
        grad_x = linear_backward(x, p, np.zeros((3, 2)))
        assert not grad_x.any()
        assert not p.grad_weight.any()
        assert not p.grad_bias.any()

    def test_scalar_product_rule(self):
        p = LinearParams(weight=np.array([[3.0]]), bias=None)
        grad_x = linear_backward(np.array([[2.0]]), p, np.array([[1.0]]))
        assert grad_x[0, 0] == 3.0
        assert p.grad_weight[0, 0] == 2.0

    def test_backward_matches_finite_differences(self, rng):
        x = rng.normal(size=(3, 4))
        p = LinearParams(weight=rng.normal(size=(4, 2)), bias=rng.normal(size=2))
        probe = rng.normal(size=(3, 2))  # scalar loss = sum(out * probe)

        def loss():
            return float(np.sum(linear_forward(x, p) * probe))

        grad_x = linear_backward(x, p, probe)
        assert rel_err(grad_x, numerical_grad(loss, x)) < 1e-6
        assert rel_err(p.grad_weight, numerical_grad(loss, p.weight)) < 1e-6
        assert rel_err(p.grad_bias, numerical_grad(loss, p.bias)) < 1e-6

    def test_grads_accumulate(self, rng):
        x = rng.normal(size=(2, 3))
        p = LinearParams(weight=rng.normal(size=(3, 2)), bias=np.zeros(2))
        g = rng.normal(size=(2, 2))
        linear_backward(x, p, g)
        once = p.grad_weight.copy()
        linear_backward(x, p, g)
        np.testing.assert_allclose(p.grad_weight, 2 * once, rtol=1e-15)


class TestGelu:
    def test_zero(self):
        assert gelu(np.array([0.0]))[0] == 0.0

    def test_asymptotes(self):
        assert abs(gelu(np.array([20.0]))[0] - 20.0) < 1e-8
        assert abs(gelu(np.array([-20.0]))[0]) < 1e-8

    def test_matches_scalar_erf(self, rng):
        x = rng.normal(size=32)
        expected = [v * 0.5 * (1.0 + math.erf(v / math.sqrt(2))) for v in x]
        np.testing.assert_allclose(gelu(x), expected, rtol=1e-14)

    def test_backward_matches_finite_differences_on_grid(self):
        x = np.linspace(-5.0, 5.0, 101)
        h = 1e-5
        numeric = (gelu(x + h) - gelu(x - h)) / (2 * h)
        analytic = gelu_backward(x, np.ones_like(x))
        assert rel_err(analytic, numeric) < 1e-6


class TestDropout:
    def test_rate_zero_is_exact_identity(self, rng):
        x = rng.normal(size=(4, 5))
        y, mask = dropout(x, 0.0, rng, training=True)
        np.testing.assert_array_equal(y, x)
        np.testing.assert_array_equal(mask, np.ones_like(x))

    def test_inference_is_identity(self, rng):
        x = rng.normal(size=(4, 5))
        y, mask = dropout(x, 0.7, rng, training=False)
        assert y is x
        assert mask is None

    def test_invalid_rate(self, rng):
        for rate in (-0.1, 1.0, 1.5):
            with pytest.raises(ConfigError):
                dropout(np.ones((2, 2)), rate, rng, training=True)

    def test_statistics_at_rate_point_two(self):
        r = make_rng(7)
        x = np.ones((1000, 1000))
        y, mask = dropout(x, 0.2, r, training=True)
        zero_frac = float((y == 0).mean())
        assert abs(zero_frac - 0.2) < 0.002
        assert abs(y.mean() - x.mean()) < 0.01 * abs(x.mean())

    def test_frozen_mask_replay_and_backward(self, rng):
        x = rng.normal(size=(3, 4))
        y, mask = dropout(x, 0.5, make_rng(3), training=True)
        np.testing.assert_array_equal(apply_dropout_mask(x, mask), y)
        g = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(dropout_backward(g, mask), g * mask)


class TestMseLoss:
    def test_perfect_fit(self, rng):
        x = rng.normal(size=(3, 5))
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0
        assert not grad.any()

    def test_single_entry(self):
        loss, grad = mse_loss(np.array([[1.0]]), np.array([[3.0]]))
        assert loss == 4.0
        # d/dpred (pred - label)^2 = 2*(1-3): magnitude 4, pointing down.
        assert grad[0, 0] == -4.0

    def test_double_loop_oracle_and_fd(self, rng):
        pred = rng.normal(size=(8, 5))
        label = rng.normal(size=(8, 5))
        acc = 0.0
        for i in range(8):
            for j in range(5):
                acc += (pred[i, j] - label[i, j]) ** 2
        loss, grad = mse_loss(pred, label)
        assert abs(loss - acc / 40.0) < 1e-12
        fd = numerical_grad(lambda: mse_loss(pred, label)[0], pred)
        assert rel_err(grad, fd) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 5)), np.zeros((3, 5)))


def reference_adamw_scalar(theta, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8,
                           wd=0.0):
    """Hand-stepped scalar reference of the decoupled update formulas."""
    m = v = 0.0
    trace = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * theta)
        trace.append(theta)
    return trace


class TestAdamW:
    def test_zero_grad_keeps_params(self):
        p = [np.array([1.5, -2.0])]
        state = AdamWState.init(p)
        before = p[0].copy()
        adamw_step(p, [np.zeros(2)], state, AdamWConfig(learning_rate=0.1,
                                                        weight_decay=0.0))
        np.testing.assert_array_equal(p[0], before)

    def test_single_scalar_step(self):
        p = [np.array([1.0])]
        state = AdamWState.init(p)
        cfg = AdamWConfig(learning_rate=0.1, weight_decay=0.0)
        adamw_step(p, [np.array([1.0])], state, cfg)
        assert abs(p[0][0] - (1.0 - 0.1 * (1.0 / (1.0 + 1e-8)))) < 1e-15

    def test_ten_step_trace_matches_reference(self, rng):
        grads = list(rng.normal(size=10))
        p = [np.array([0.7])]
        state = AdamWState.init(p)
        cfg = AdamWConfig(learning_rate=0.05, weight_decay=0.01)
        mine = []
        for g in grads:
            adamw_step(p, [np.array([g])], state, cfg)
            mine.append(float(p[0][0]))
        expected = reference_adamw_scalar(0.7, grads, lr=0.05, wd=0.01)
        np.testing.assert_allclose(mine, expected, atol=1e-12)

    def test_converges_on_quadratic(self):
        # minimize f(theta) = theta^2 from theta = 1
        p = [np.array([1.0])]
        state = AdamWState.init(p)
        cfg = AdamWConfig(learning_rate=0.015, weight_decay=0.0)
        values = []
        for _ in range(100):
            adamw_step(p, [2.0 * p[0]], state, cfg)
            values.append(abs(float(p[0][0])))
        assert values[-1] < 0.1
        # monotone decrease after warmup
        tail = values[10:]
        assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))

    def test_lr_zero_freezes_params(self, rng):
        p = [rng.normal(size=(3, 2))]
        before = p[0].copy()
        state = AdamWState.init(p)
        cfg = AdamWConfig(learning_rate=0.0)
        for _ in range(5):
            adamw_step(p, [rng.normal(size=(3, 2))], state, cfg)
        np.testing.assert_array_equal(p[0], before)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(99).random(16)
        b = make_rng(99).random(16)
        np.testing.assert_array_equal(a, b)

    def test_spawned_streams_are_distinct_and_reproducible(self):
        kids_a = spawn_rngs(make_rng(5), 3)
        kids_b = spawn_rngs(make_rng(5), 3)
        for ka, kb in zip(kids_a, kids_b):
            np.testing.assert_array_equal(ka.random(8), kb.random(8))
        assert not np.array_equal(kids_a[0].random(8), kids_a[1].random(8))

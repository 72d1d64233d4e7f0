import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advdrive.errors import ConfigError, DimensionError, UsageError
from advdrive.tensor import (Adam, AdamState, Tensor, activation, adam_step, batchnorm,
                             binary_cross_entropy, conv2d, cross_entropy, dense, dropout,
                             l2_hinge, make_rng, margin_loss, maxpool2d, softmax,
                             upsample_nearest)
from advdrive.tensor import kernels
from advdrive.tensor.functional import conv_output_size

from conftest import gradcheck


# brute-force oracles, deliberately loop-based --------------------------------------

def conv_reference(x, w, stride=1):
    h, wd, cin = x.shape
    k, _, _, f = w.shape
    ho, wo = (h - k) // stride + 1, (wd - k) // stride + 1
    out = np.zeros((ho, wo, f))
    for i in range(ho):
        for j in range(wo):
            for o in range(f):
                acc = 0.0
                for a in range(k):
                    for b in range(k):
                        for c in range(cin):
                            acc += x[i * stride + a, j * stride + b, c] * w[a, b, c, o]
                out[i, j, o] = acc
    return out


def pool_reference(x):
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c), dtype=x.dtype)
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                out[i, j, ch] = max(x[2 * i + a, 2 * j + b, ch] for a in range(2) for b in range(2))
    return out


def matmul_reference(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestConv2d:
    def test_stride2_valid_shape(self):
        x = np.zeros((32, 32, 3), np.float32)
        w = np.zeros((4, 4, 3, 32), np.float32)
        assert conv2d(x, w, stride=2).shape == (15, 15, 32)

    def test_one_by_one_identity(self, rng):
        x = rng.standard_normal((6, 5, 4)).astype(np.float32)
        w = np.eye(4, dtype=np.float32).reshape(1, 1, 4, 4)
        np.testing.assert_array_equal(conv2d(x, w).data, x)

    def test_matches_loop_reference(self, rng):
        x = rng.standard_normal((5, 5, 1))
        w = rng.standard_normal((3, 3, 1, 2))
        out = conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64)).data
        np.testing.assert_allclose(out, conv_reference(x, w), atol=1e-6)

    def test_float32_matches_reference(self, rng):
        x = rng.standard_normal((9, 8, 3)).astype(np.float32)
        w = rng.standard_normal((4, 4, 3, 5)).astype(np.float32)
        np.testing.assert_allclose(conv2d(x, w, stride=2).data, conv_reference(x, w, 2),
                                   atol=1e-5)

    def test_same_padding_shape(self):
        x = np.zeros((1, 32, 32, 3), np.float32)
        assert conv2d(x, np.zeros((3, 3, 3, 8), np.float32), padding="same").shape == (1, 32, 32, 8)
        assert conv2d(x, np.zeros((3, 3, 3, 8), np.float32), stride=2,
                      padding="same").shape == (1, 16, 16, 8)
        assert conv2d(np.zeros((1, 7, 5, 1), np.float32), np.zeros((3, 3, 1, 1), np.float32),
                      stride=2, padding="same").shape == (1, 4, 3, 1)

    def test_channel_mismatch_names_axis(self):
        with pytest.raises(DimensionError, match="Cin"):
            conv2d(np.zeros((8, 8, 3), np.float32), np.zeros((3, 3, 4, 2), np.float32))

    def test_kernel_larger_than_input(self):
        with pytest.raises(DimensionError, match="H=2"):
            conv2d(np.zeros((2, 8, 1), np.float32), np.zeros((3, 3, 1, 1), np.float32))

    @settings(max_examples=40, deadline=None)
    @given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.integers(1, 5),
           s=st.integers(1, 3), pad=st.sampled_from(["valid", "same"]))
    def test_shape_algebra(self, h, w, k, s, pad):
        x = np.zeros((2, h, w, 2), np.float32)
        kern = np.zeros((k, k, 2, 3), np.float32)
        if pad == "valid" and (k > h or k > w):
            with pytest.raises(DimensionError):
                conv2d(x, kern, stride=s, padding=pad)
            return
        out = conv2d(x, kern, stride=s, padding=pad)
        if pad == "valid":
            assert out.shape == (2, (h - k) // s + 1, (w - k) // s + 1, 3)
        else:
            assert out.shape == (2, math.ceil(h / s), math.ceil(w / s), 3)
        assert out.shape[1] == conv_output_size(h, k, s, pad)


class TestMaxPool:
    def test_constant(self):
        out = maxpool2d(np.full((4, 4, 1), 7.0, np.float32))
        np.testing.assert_array_equal(out.data, np.full((2, 2, 1), 7.0))

    def test_single_window(self):
        x = np.array([[1, 2], [3, 4]], np.float32).reshape(2, 2, 1)
        assert maxpool2d(x).data.item() == 4

    def test_matches_window_oracle(self, rng):
        x = rng.standard_normal((6, 6, 2)).astype(np.float32)
        np.testing.assert_array_equal(maxpool2d(x).data, pool_reference(x))

    def test_odd_dims_floor(self, rng):
        x = rng.standard_normal((7, 5, 3)).astype(np.float32)
        out = maxpool2d(x)
        assert out.shape == (3, 2, 3)
        np.testing.assert_array_equal(out.data, pool_reference(x))

    def test_tie_routes_to_first_occurrence(self):
        x = Tensor(np.ones((1, 2, 2, 1)), requires_grad=True)
        maxpool2d(x).sum().backward()
        np.testing.assert_array_equal(x.grad.reshape(2, 2), [[1, 0], [0, 0]])

    def test_too_small(self):
        with pytest.raises(DimensionError):
            maxpool2d(np.zeros((1, 5, 1), np.float32))

    @settings(max_examples=30, deadline=None)
    @given(h=st.integers(2, 13), w=st.integers(2, 13))
    def test_shape_algebra(self, h, w):
        assert maxpool2d(np.zeros((1, h, w, 2), np.float32)).shape == (1, h // 2, w // 2, 2)


class TestDense:
    def test_identity(self, rng):
        x = rng.standard_normal((3, 4)).astype(np.float32)
        out = dense(x, np.eye(4, dtype=np.float32), np.zeros(4, np.float32))
        np.testing.assert_array_equal(out.data, x)

    def test_shape(self):
        out = dense(np.zeros((1, 1600), np.float32), np.zeros((1600, 512), np.float32),
                    np.zeros(512, np.float32))
        assert out.shape == (1, 512)

    def test_matches_loop_reference(self, rng):
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((3, 4))
        bias = rng.standard_normal(4)
        out = dense(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64),
                    Tensor(bias, dtype=np.float64)).data
        np.testing.assert_allclose(out, matmul_reference(a, b) + bias, atol=1e-6)

    def test_inner_mismatch(self):
        with pytest.raises(DimensionError):
            dense(np.zeros((2, 3), np.float32), np.zeros((4, 2), np.float32))


class TestActivations:
    def test_relu(self):
        assert activation(np.array([-3.0]), "relu").data.tolist() == [0]
        assert activation(np.array([5.0]), "relu").data.tolist() == [5]

    def test_leaky(self):
        assert activation(np.array([-1.0]), "leaky_relu", alpha=0.2).data[0] == pytest.approx(-0.2)

    def test_sigmoid_zero(self):
        assert activation(np.array([0.0]), "sigmoid").data[0] == 0.5

    def test_ranges_and_overflow(self):
        z = np.array([-1e4, -50, 0, 50, 1e4], np.float32)
        with np.errstate(over="raise"):
            s = activation(z, "sigmoid").data
        assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))
        t = activation(z, "tanh").data
        assert np.all((t >= -1) & (t <= 1))

    def test_unknown(self):
        with pytest.raises(ConfigError):
            activation(np.zeros(1), "gelu")


class TestSoftmax:
    def test_uniform(self):
        out = softmax(np.zeros((2, 43), np.float32)).data
        np.testing.assert_allclose(out, 1 / 43, rtol=1e-6)

    def test_no_overflow(self):
        out = softmax(np.array([[1000.0, 0.0]], np.float32)).data
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-30)

    def test_matches_direct_formula(self, rng):
        z = rng.standard_normal((1, 7))
        ref = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(softmax(Tensor(z, dtype=np.float64)).data, ref, atol=1e-6)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-80, 80), min_size=2, max_size=20))
    def test_rows_sum_to_one(self, row):
        out = softmax(np.array([row], np.float32)).data
        assert abs(out.sum() - 1) <= 1e-5


class TestBatchNorm:
    def test_train_normalizes(self, rng):
        x = rng.standard_normal((64, 5)).astype(np.float32) * 3 + 2
        out = batchnorm(x, np.ones(5), np.zeros(5), np.zeros(5, np.float32),
                        np.ones(5, np.float32), train=True).data
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-4)
        np.testing.assert_allclose(out.var(axis=0), 1, atol=1e-4)

    def test_infer_identity(self, rng):
        x = rng.standard_normal((4, 3)).astype(np.float32)
        out = batchnorm(x, np.ones(3), np.zeros(3), np.zeros(3, np.float32),
                        np.ones(3, np.float32), train=False).data
        np.testing.assert_allclose(out, x, rtol=1e-5, atol=1e-6)

    def test_running_stats_converge_to_hand_computed(self):
        x = np.array([[1.0], [2.0], [4.0], [9.0]], np.float32)
        mean, var = 4.0, ((1 - 4) ** 2 + (2 - 4) ** 2 + 0 + (9 - 4) ** 2) / 4  # 9.5
        rm, rv = np.zeros(1, np.float32), np.ones(1, np.float32)
        for _ in range(2000):
            train_out = batchnorm(x, np.ones(1), np.zeros(1), rm, rv, train=True).data
        assert rm[0] == pytest.approx(mean, rel=1e-4)
        assert rv[0] == pytest.approx(var, rel=1e-4)
        infer_out = batchnorm(x, np.ones(1), np.zeros(1), rm, rv, train=False).data
        expected = (x - mean) / np.sqrt(var + 1e-5)
        np.testing.assert_allclose(train_out, expected, rtol=1e-5, atol=1e-5)
        np.testing.assert_allclose(infer_out, expected, rtol=1e-4, atol=1e-4)

    def test_single_sample_train_rejected(self):
        with pytest.raises(DimensionError):
            batchnorm(np.zeros((1, 3), np.float32), np.ones(3), np.zeros(3),
                      np.zeros(3, np.float32), np.ones(3, np.float32), train=True)

    def test_conv_layout_normalizes_per_channel(self, rng):
        x = rng.standard_normal((8, 5, 5, 4)).astype(np.float32) * 2 - 1
        out = batchnorm(x, np.ones(4), np.zeros(4), np.zeros(4, np.float32),
                        np.ones(4, np.float32), train=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0, atol=1e-4)


class TestDropout:
    def test_infer_identity(self, rng):
        x = rng.standard_normal((5, 5)).astype(np.float32)
        np.testing.assert_array_equal(dropout(x, 0.4, train=False).data, x)

    def test_rate_zero_identity(self, rng):
        x = rng.standard_normal((5, 5)).astype(np.float32)
        np.testing.assert_array_equal(dropout(x, 0.0, train=True, rng=make_rng(0)).data, x)

    def test_law_of_large_numbers(self):
        x = np.ones(10_000, np.float32)
        out = dropout(x, 0.4, train=True, rng=make_rng(7)).data
        surviving = (out != 0).mean()
        assert 0.57 <= surviving <= 0.63
        assert abs(out.mean() - 1.0) <= 0.03

    def test_rate_one_rejected(self):
        with pytest.raises(ConfigError):
            dropout(np.ones(3, np.float32), 1.0, train=True, rng=make_rng(0))


class TestLosses:
    def test_ce_perfect(self):
        p = np.eye(4, dtype=np.float32)
        assert cross_entropy(p, [0, 1, 2, 3]).item() <= 1e-6

    def test_ce_uniform(self):
        p = np.full((3, 43), 1 / 43, np.float32)
        assert cross_entropy(p, [0, 5, 42]).item() == pytest.approx(math.log(43), abs=1e-4)

    def test_ce_matches_formula(self, rng):
        z = rng.random((6, 5))
        p = z / z.sum(axis=1, keepdims=True)
        y = rng.integers(0, 5, 6)
        ref = -np.mean(np.log(p[np.arange(6), y] + 1e-7))
        assert cross_entropy(Tensor(p, dtype=np.float64), y).item() == pytest.approx(ref, abs=1e-6)

    def test_ce_label_out_of_range(self):
        with pytest.raises(ValueError):
            cross_entropy(np.full((1, 3), 1 / 3, np.float32), [3])

    def test_bce_half(self):
        assert binary_cross_entropy(np.full((8, 1), 0.5, np.float32),
                                    np.r_[np.ones(4), np.zeros(4)]).item() == pytest.approx(
            math.log(2), abs=1e-4)

    def test_bce_exact(self):
        t = np.array([1, 0, 1, 0], np.float32)
        assert binary_cross_entropy(t.reshape(4, 1), t).item() <= 1e-6

    def test_bce_matches_formula(self, rng):
        p = rng.uniform(0.05, 0.95, (7, 1))
        t = rng.integers(0, 2, 7)
        ref = -np.mean(t * np.log(p[:, 0] + 1e-7) + (1 - t) * np.log(1 - p[:, 0] + 1e-7))
        assert binary_cross_entropy(Tensor(p, dtype=np.float64), t).item() == pytest.approx(
            ref, abs=1e-6)

    def test_margin_clamped_when_misclassified(self):
        p = np.array([[0.1, 0.9], [0.3, 0.7]], np.float32)
        assert margin_loss(p, [0, 0], kappa=0).item() == 0.0

    def test_margin_value(self):
        p = np.array([[0.6, 0.3, 0.1]], np.float32)
        assert margin_loss(p, [0]).item() == pytest.approx(0.3)

    def test_grouped_margin_value(self):
        # classes 0,1 form one group: best inside 0.5, best outside 0.3
        p = np.array([[0.2, 0.5, 0.3]], np.float32)
        assert margin_loss(p, [0], groups=[0, 0, 1]).item() == pytest.approx(0.2)

    def test_grouped_margin_negative_iff_argmax_leaves_group(self):
        p = np.array([[0.1, 0.2, 0.7], [0.3, 0.1, 0.6]], np.float32)
        assert margin_loss(p, [0, 0], groups=[0, 0, 1]).item() == 0.0

    @given(st.lists(st.integers(-20, 20), min_size=6, max_size=6), st.integers(0, 5))
    @settings(max_examples=60, deadline=None)
    def test_grouped_margin_sign_matches_group_of_argmax(self, scores, y):
        p = np.array([scores], np.float64)
        groups = np.array([0, 0, 1, 1, 2, 2])
        if np.sort(p[0])[-1] == np.sort(p[0])[-2]:
            return
        loss = margin_loss(p, [y], groups=groups).item()
        assert (loss > 0) == (groups[p.argmax()] == groups[y])
        identity = margin_loss(p, [y], groups=np.arange(6)).item()
        assert identity == pytest.approx(margin_loss(p, [y]).item())

    def test_grouped_margin_needs_two_groups(self):
        with pytest.raises(ValueError):
            margin_loss(np.ones((1, 3), np.float32), [0], groups=[0, 0, 0])

    def test_hinge_zero_residual(self):
        assert l2_hinge(np.zeros((3, 4, 4, 3), np.float32), 0.1).item() == 0.0

    def test_hinge_value(self):
        d = np.zeros((2, 2, 2, 1), np.float32)
        d[0, 0, 0, 0] = 3.0
        d[0, 1, 1, 0] = 4.0  # norm 5
        assert l2_hinge(d, 1.0).item() == pytest.approx(2.0)


class TestBackward:
    def test_sum_grad_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x).sum().backward()
        assert x.grad[0] == pytest.approx(6.0)

    def test_not_on_tape(self):
        with pytest.raises(UsageError):
            Tensor(1.0).backward()

    def test_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            (x * 2.0).backward()

    def test_shared_subexpression(self):
        x = Tensor([2.0], requires_grad=True)
        y = x * x
        (y * y + y).sum().backward()  # x^4 + x^2 -> 4x^3 + 2x = 36
        assert x.grad[0] == pytest.approx(36.0)


class TestGradients:
    """Central differences, h=1e-3, max relative error <= 1e-3, kinks masked."""

    TOL = 1e-3
    H = 1e-3

    def check(self, op, inputs, masks=None):
        errs = gradcheck(op, inputs, h=self.H, masks=masks)
        assert max(errs) <= self.TOL, errs

    def away_from_zero(self, rng, shape):
        x = rng.standard_normal(shape)
        return np.where(np.abs(x) < 0.05, 0.3, x)

    def test_conv_valid_strided(self, rng):
        self.check(lambda x, w, b: conv2d(x, w, b, stride=2),
                   [rng.standard_normal((2, 7, 6, 3)), rng.standard_normal((3, 3, 3, 4)),
                    rng.standard_normal(4)])

    def test_conv_same(self, rng):
        self.check(lambda x, w, b: conv2d(x, w, b, stride=2, padding="same"),
                   [rng.standard_normal((2, 5, 6, 2)), rng.standard_normal((3, 3, 2, 3)),
                    rng.standard_normal(3)])

    def test_maxpool(self, rng):
        # distinct values with gaps >> h so the argmax cannot flip
        x = rng.permutation(2 * 6 * 5 * 2).reshape(2, 6, 5, 2) * 0.1
        self.check(maxpool2d, [x])

    def test_dense(self, rng):
        self.check(dense, [rng.standard_normal((3, 5)), rng.standard_normal((5, 4)),
                           rng.standard_normal(4)])

    @pytest.mark.parametrize("kind", ["relu", "leaky_relu", "sigmoid", "tanh"])
    def test_activation(self, rng, kind):
        x = rng.standard_normal((4, 6)) * 2
        mask = np.abs(x) > self.H
        self.check(lambda t: activation(t, kind), [x], masks=[mask])

    def test_softmax(self, rng):
        self.check(softmax, [rng.standard_normal((3, 6))])

    @pytest.mark.parametrize("train", [True, False])
    def test_batchnorm(self, rng, train):
        rm = rng.standard_normal(3).astype(np.float32)
        rv = rng.uniform(0.5, 2, 3).astype(np.float32)
        self.check(lambda x, g, b: batchnorm(x, g, b, rm.copy(), rv.copy(), train),
                   [rng.standard_normal((6, 2, 2, 3)), rng.uniform(0.5, 1.5, 3),
                    rng.standard_normal(3)])

    def test_dropout(self, rng):
        self.check(lambda x: dropout(x, 0.4, True, make_rng(3)), [rng.standard_normal((5, 7))])

    def test_upsample(self, rng):
        self.check(upsample_nearest, [rng.standard_normal((2, 3, 4, 2))])

    def test_cross_entropy(self, rng):
        y = rng.integers(0, 5, 4)
        z = rng.uniform(0.1, 1, (4, 5))
        self.check(lambda p: cross_entropy(p, y), [z / z.sum(axis=1, keepdims=True)])

    def test_softmax_cross_entropy_chain(self, rng):
        y = rng.integers(0, 5, 4)
        self.check(lambda z: cross_entropy(softmax(z), y), [rng.standard_normal((4, 5))])

    def test_binary_cross_entropy(self, rng):
        t = rng.integers(0, 2, 6)
        self.check(lambda p: binary_cross_entropy(p, t), [rng.uniform(0.1, 0.9, (6, 1))])

    def test_margin_loss(self, rng):
        y = np.array([0, 1, 2])
        p = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.45, 0.15, 0.4]])
        self.check(lambda q: margin_loss(q, y), [p])

    def test_grouped_margin_loss(self, rng):
        y = np.array([0, 3, 5])
        p = rng.standard_normal((3, 6))
        self.check(lambda q: margin_loss(q, y, groups=[0, 0, 1, 1, 2, 2]), [p])

    def test_l2_hinge(self, rng):
        d = rng.standard_normal((3, 2, 2, 3))
        self.check(lambda t: l2_hinge(t, 1.0), [d])

    def test_composite_network_path(self, rng):
        w1 = rng.standard_normal((3, 3, 2, 4)) * 0.5
        w2 = rng.standard_normal((16, 3)) * 0.5
        y = np.array([0, 2])

        def net(x):
            h = activation(conv2d(x, w1), "tanh")
            h = maxpool2d(h).reshape((2, -1))
            return cross_entropy(softmax(dense(h, w2)), y)

        x = rng.standard_normal((2, 6, 6, 2))
        self.check(net, [x])


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = {"w": np.array([1.0, -2.0], np.float32)}
        adam_step(p, {"w": np.zeros(2, np.float32)}, AdamState())
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_magnitude_is_lr(self):
        for g in (1e-3, 0.5, 7.0):
            p = {"w": np.zeros(1, np.float64)}
            adam_step(p, {"w": np.array([g])}, AdamState(learning_rate=1e-3))
            assert abs(abs(p["w"][0]) - 1e-3) <= 1e-6

    def test_quadratic_convergence(self):
        x = Tensor([5.0], requires_grad=True)
        opt = Adam({"x": x}, lr=1e-2)
        for _ in range(2000):
            opt.zero_grad()
            (x * x).sum().backward()
            opt.step()
        assert abs(x.data[0]) < 0.01

    def test_default_hyperparameters(self):
        s = AdamState()
        assert (s.learning_rate, s.beta1, s.beta2) == (1e-3, 0.9, 0.999)

    def test_missing_grad(self):
        with pytest.raises(UsageError):
            adam_step({"w": np.zeros(1)}, {}, AdamState())

    def test_step_counter(self):
        s = AdamState()
        p = {"w": np.zeros(2)}
        for i in range(3):
            adam_step(p, {"w": np.ones(2)}, s)
            assert s.step == i + 1


class TestKernelBackends:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_backends_agree(self, rng, dtype):
        if "native" not in kernels.BACKENDS:
            pytest.skip("compiled kernels not built")
        py, nat = kernels.BACKENDS["python"], kernels.BACKENDS["native"]
        x = rng.standard_normal((2, 9, 8, 3)).astype(dtype)
        for k, s in [(3, 1), (4, 2), (1, 1)]:
            cols = py.im2col(x, k, s)
            np.testing.assert_array_equal(cols, nat.im2col(x, k, s))
            np.testing.assert_allclose(py.col2im(cols, x.shape, k, s),
                                       nat.col2im(cols, x.shape, k, s), rtol=1e-6)
        o1, a1 = py.maxpool2_forward(x)
        o2, a2 = nat.maxpool2_forward(x)
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(py.maxpool2_backward(o1, a1, x.shape),
                                      nat.maxpool2_backward(o1, a1, x.shape))

    def test_backend_selected(self):
        assert kernels.BACKEND in kernels.BACKENDS


def test_determinism_bit_identical(rng):
    x0 = rng.standard_normal((4, 8, 8, 3)).astype(np.float32)
    w0 = rng.standard_normal((3, 3, 3, 5)).astype(np.float32)

    def run():
        x = Tensor(x0, requires_grad=True)
        w = Tensor(w0, requires_grad=True)
        h = dropout(activation(conv2d(x, w), "relu"), 0.3, True, make_rng(11))
        loss = cross_entropy(softmax(h.reshape((4, -1))), [0, 1, 2, 3])
        loss.backward()
        return loss.data.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()

"""Tensor core: operator contracts, hand-checked values, backward basics."""

import numpy as np
import pytest

from fuseseg import functional as F
from fuseseg.tensor import (NonFiniteError, ShapeError, Tensor, add,
                            concat_channels, elementwise, mul, repeat_channels,
                            scalar_add, slice_channels, sub)


def t(arr, **kw):
    return Tensor(np.asarray(arr, dtype=np.float64), **kw)


class TestConv2d:
    def test_identity_kernel(self):
        x = t(np.arange(9).reshape(1, 1, 3, 3))
        w = t(np.ones((1, 1, 1, 1)))
        assert np.array_equal(F.conv2d(x, w).data, x.data)

    def test_dilated_hand_sum(self):
        # 5x5 ones, 3x3 ones kernel, dilation 2: one output tap summing 9 ones
        x = t(np.ones((1, 1, 5, 5)))
        w = t(np.ones((1, 1, 3, 3)))
        y = F.conv2d(x, w, dilation=2)
        assert y.data.shape == (1, 1, 1, 1)
        assert y.data.ravel()[0] == 9.0

    def test_output_shape_formula(self):
        x = t(np.zeros((2, 3, 11, 9)))
        w = t(np.zeros((4, 3, 3, 3)))
        y = F.conv2d(x, w, stride=2, dilation=2, padding=1)
        oh = (11 + 2 - 2 * 2 - 1) // 2 + 1
        ow = (9 + 2 - 2 * 2 - 1) // 2 + 1
        assert y.data.shape == (2, 4, oh, ow)

    def test_channel_mismatch_names_both_shapes(self):
        x = t(np.zeros((1, 3, 4, 4)))
        w = t(np.zeros((2, 4, 1, 1)))
        with pytest.raises(ShapeError) as err:
            F.conv2d(x, w)
        assert "(1, 3, 4, 4)" in str(err.value) and "(2, 4, 1, 1)" in str(err.value)

    def test_bias(self):
        x = t(np.zeros((1, 2, 2, 2)))
        w = t(np.zeros((3, 2, 1, 1)))
        b = t([1.0, -2.0, 0.5])
        y = F.conv2d(x, w, b)
        assert np.allclose(y.data[0, :, 0, 0], [1.0, -2.0, 0.5])


class TestConvTranspose2d:
    def test_stride2_scatter(self):
        x = t([[1.0, 2.0], [3.0, 4.0]])
        y = F.conv_transpose2d(Tensor(x.data.reshape(1, 1, 2, 2)), t(np.ones((1, 1, 1, 1))),
                               stride=2)
        expect = np.zeros((3, 3))
        expect[0, 0], expect[0, 2], expect[2, 0], expect[2, 2] = 1, 2, 3, 4
        assert np.array_equal(y.data[0, 0], expect)

    def test_adjoint_identity(self):
        # <conv2d(x), y> == <x, conv_transpose2d(y)> with a shared kernel
        rng = np.random.default_rng(0)
        x = t(rng.standard_normal((2, 3, 7, 7)))
        w = t(rng.standard_normal((5, 3, 3, 3)))
        y = F.conv2d(x, w, stride=2, padding=1)
        cot = t(rng.standard_normal(y.data.shape))
        lhs = float((y.data * cot.data).sum())
        rhs = float((x.data * F.conv_transpose2d(cot, w, stride=2, padding=1).data).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_output_size(self):
        x = t(np.zeros((1, 2, 4, 4)))
        w = t(np.zeros((2, 3, 8, 8)))
        assert F.conv_transpose2d(x, w, stride=4, padding=2).data.shape == (1, 3, 16, 16)


class TestMaxPool:
    def test_2x2(self):
        x = t(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert F.maxpool2d(x, 2, 2).data.ravel().tolist() == [4.0]

    def test_self_inclusive_window(self):
        rng = np.random.default_rng(1)
        x = t(rng.standard_normal((2, 3, 8, 8)))
        y = F.maxpool2d(x, 3, 1, 1)
        assert (y.data >= x.data).all()

    def test_brute_force(self):
        rng = np.random.default_rng(2)
        arr = rng.standard_normal((1, 2, 9, 7))
        y = F.maxpool2d(t(arr), 3, 2, 1).data
        padded = np.pad(arr, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
        for n in range(1):
            for c in range(2):
                for i in range(y.shape[2]):
                    for j in range(y.shape[3]):
                        window = padded[n, c, i * 2:i * 2 + 3, j * 2:j * 2 + 3]
                        assert y[n, c, i, j] == window.max()

    def test_tie_routes_to_first_row_major(self):
        x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = F.maxpool2d(x, 2, 2)
        y.sum().backward()
        assert x.grad[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]

    def test_all_padding_window_rejected(self):
        x = t(np.zeros((1, 1, 2, 2)))
        with pytest.raises(ShapeError):
            F.maxpool2d(x, 2, 4, 2)


class TestActivations:
    def test_sigmoid_zero(self):
        assert F.sigmoid(t(np.zeros((1, 1, 1, 1)))).data.ravel()[0] == 0.5

    def test_sigmoid_strict_range(self):
        rng = np.random.default_rng(3)
        y = F.sigmoid(t(rng.standard_normal((2, 3, 5, 5)) * 10))
        assert (y.data > 0).all() and (y.data < 1).all()

    def test_relu_nonnegative(self):
        rng = np.random.default_rng(4)
        y = F.relu(t(rng.standard_normal((2, 3, 4, 4))))
        assert (y.data >= 0).all()

    def test_softmax_uniform(self):
        y = F.softmax_channel(t(np.ones((1, 4, 2, 2))))
        assert np.allclose(y.data, 0.25)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(5)
        y = F.softmax_channel(t(rng.standard_normal((2, 6, 3, 3)) * 5))
        assert np.abs(y.data.sum(axis=1) - 1).max() < 1e-6


class TestBatchNorm:
    def test_constant_channel_maps_to_beta(self):
        from fuseseg.layers import BatchNorm2d
        bn = BatchNorm2d(2, np.float64)
        bn.beta.data[:] = [0.5, -1.0]
        x = t(np.full((3, 2, 4, 4), 7.0))
        y = bn(x)
        assert np.allclose(y.data[:, 0], 0.5) and np.allclose(y.data[:, 1], -1.0)

    def test_moments(self):
        from fuseseg.layers import BatchNorm2d
        rng = np.random.default_rng(6)
        bn = BatchNorm2d(3, np.float64)
        bn.gamma.data[:] = [1.0, 2.0, 0.5]
        bn.beta.data[:] = [0.0, 1.0, -1.0]
        y = bn(t(rng.standard_normal((4, 3, 8, 8)) * 3 + 2))
        assert np.abs(y.data.mean(axis=(0, 2, 3)) - bn.beta.data).max() < 1e-4
        assert np.abs(y.data.var(axis=(0, 2, 3)) - bn.gamma.data ** 2).max() < 1e-4

    def test_running_stats_update_and_eval(self):
        from fuseseg.layers import BatchNorm2d
        rng = np.random.default_rng(7)
        bn = BatchNorm2d(2, np.float64)
        x = rng.standard_normal((2, 2, 4, 4)) + 5
        bn(t(x))
        expect_mean = 0.9 * 0 + 0.1 * x.mean(axis=(0, 2, 3))
        assert np.allclose(bn._buffers["running_mean"], expect_mean)
        bn.eval()
        before = bn._buffers["running_mean"].copy()
        bn(t(x))
        assert np.array_equal(bn._buffers["running_mean"], before)


class TestResize:
    def test_identity(self):
        rng = np.random.default_rng(8)
        x = t(rng.standard_normal((2, 3, 5, 7)))
        assert np.array_equal(F.resize_bilinear(x, 5, 7).data, x.data)

    def test_hand_interpolation(self):
        x = t(np.array([[0.0, 0.0], [1.0, 1.0]]).reshape(1, 1, 2, 2))
        y = F.resize_bilinear(x, 4, 4).data[0, 0]
        # columns constant, rows monotone through the known ramp
        for col in range(4):
            assert np.allclose(y[:, col], [0.0, 0.25, 0.75, 1.0])

    def test_upsample_of_1x1_is_constant(self):
        x = t(np.full((1, 2, 1, 1), 3.5))
        assert np.allclose(F.resize_bilinear(x, 6, 6).data, 3.5)


class TestStructuralOps:
    def test_concat_channel_count(self):
        a = t(np.zeros((1, 3, 2, 2)))
        b = t(np.zeros((1, 2, 2, 2)))
        assert concat_channels(a, b).data.shape == (1, 5, 2, 2)

    def test_mul_identity(self):
        rng = np.random.default_rng(9)
        x = t(rng.standard_normal((2, 3, 4, 4)))
        assert np.array_equal(mul(x, t(np.ones_like(x.data))).data, x.data)

    def test_slice_concat_round_trip(self):
        rng = np.random.default_rng(10)
        x = t(rng.standard_normal((2, 5, 3, 3)))
        left = slice_channels(x, 0, 2)
        right = slice_channels(x, 2, 5)
        assert np.array_equal(concat_channels(left, right).data, x.data)

    def test_repeat_channels_layout(self):
        x = t(np.arange(6).reshape(1, 3, 2, 1))
        y = repeat_channels(x, 2)
        assert y.data.shape == (1, 6, 2, 1)
        assert np.array_equal(y.data[0, 0], y.data[0, 1])
        assert np.array_equal(y.data[0, 4], x.data[0, 2])

    def test_elementwise_dispatch(self):
        a = t(np.full((1, 1, 2, 2), 3.0))
        b = t(np.full((1, 1, 2, 2), 2.0))
        assert np.allclose(elementwise("add", a, b).data, 5.0)
        assert np.allclose(elementwise("sub", a, b).data, 1.0)
        assert np.allclose(elementwise("mul", a, b).data, 6.0)
        assert np.allclose(elementwise("scalar_add", a, 1.5).data, 4.5)

    def test_mul_broadcast_only_singleton_channel(self):
        a = t(np.zeros((1, 3, 2, 2)))
        with pytest.raises(ShapeError):
            mul(a, t(np.zeros((1, 2, 2, 2))))
        gate = t(np.zeros((1, 1, 2, 2)))
        assert mul(a, gate).data.shape == (1, 3, 2, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            add(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 2, 3))))
        with pytest.raises(ShapeError):
            concat_channels(t(np.zeros((1, 1, 2, 2))), t(np.zeros((1, 1, 3, 2))))


class TestBackward:
    def test_sum_gives_ones(self):
        rng = np.random.default_rng(11)
        x = t(rng.standard_normal((2, 3, 4, 4)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones_like(x.data))

    def test_square_gives_2x(self):
        rng = np.random.default_rng(12)
        x = t(rng.standard_normal((2, 2, 3, 3)), requires_grad=True)
        mul(x, x).sum().backward()
        assert np.allclose(x.grad, 2 * x.data)

    def test_accumulates_until_zeroed(self):
        x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
        x.sum().backward()
        x.sum().backward()
        assert np.allclose(x.grad, 2.0)
        x.zero_grad()
        assert x.grad is None

    def test_rejects_non_scalar(self):
        x = t(np.ones((1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            scalar_add(x, 1.0).backward()

    def test_grad_only_with_requires_grad(self):
        x = t(np.ones((1, 1, 2, 2)))
        y = scalar_add(x, 1.0)
        y.sum().backward()
        assert x.grad is None and not y.requires_grad


class TestInvariants:
    def test_shape_matches_data(self):
        x = t(np.zeros((2, 3, 4, 5)))
        assert x.shape == (2, 3, 4, 5) and x.data.size == 2 * 3 * 4 * 5

    def test_assert_finite(self):
        bad = t(np.array([[[[np.nan]]]]), op="conv2d")
        with pytest.raises(NonFiniteError) as err:
            bad.assert_finite()
        assert "conv2d" in str(err.value)

    def test_default_dtype_is_float32(self):
        assert Tensor(np.zeros(3, dtype=np.int64)).dtype == np.float32

    def test_precision_modes(self):
        from fuseseg.tensor import dtype_for
        assert dtype_for("standard") == np.float32
        assert dtype_for("verification") == np.float64
        with pytest.raises(ValueError):
            dtype_for("half")

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _gradsuite import OP_TOL, OPS, check_op
from avfusion import functional as F
from avfusion.functional import ShapeError, output_extent
from avfusion.tensor import Tensor

RNG = np.random.default_rng(99)


def naive_conv(x, w, b, stride, pad):
    """Direct loop cross-correlation over every output position."""
    nd = x.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    k = w.shape[2:]
    out_shape = [(xp.shape[2 + i] - k[i]) // stride[i] + 1 for i in range(nd)]
    out = np.zeros((x.shape[0], w.shape[0], *out_shape))
    for pos in itertools.product(*(range(o) for o in out_shape)):
        window = tuple(slice(p * s, p * s + kk) for p, s, kk in zip(pos, stride, k))
        patch = xp[(slice(None), slice(None)) + window]  # (N, C, *k)
        out[(slice(None), slice(None)) + pos] = np.tensordot(patch, w, axes=(list(range(1, nd + 2)), list(range(1, nd + 2))))
    if b is not None:
        out += b.reshape((1, -1) + (1,) * nd)
    return out


def naive_maxpool(x, k, s, p):
    nd = x.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(q, q) for q in p], constant_values=-np.inf)
    out_shape = [(xp.shape[2 + i] - k[i]) // s[i] + 1 for i in range(nd)]
    out = np.empty((x.shape[0], x.shape[1], *out_shape))
    for pos in itertools.product(*(range(o) for o in out_shape)):
        window = tuple(slice(a * b, a * b + c) for a, b, c in zip(pos, s, k))
        out[(slice(None), slice(None)) + pos] = xp[(slice(None), slice(None)) + window].reshape(x.shape[0], x.shape[1], -1).max(axis=2)
    return out


class TestConv:
    def test_conv3d_stem_shape(self):
        y = F.conv3d(np.zeros((1, 3, 8, 16, 16)), np.zeros((4, 3, 7, 7, 7)), None, (1, 2, 2), (3, 3, 3))
        assert y.shape == (1, 4, 8, 8, 8)

    def test_pointwise_kernel(self):
        y = F.conv3d(np.full((1, 1, 2, 2, 2), 5.0), np.full((1, 1, 1, 1, 1), 2.0), np.zeros(1))
        np.testing.assert_array_equal(y.data, np.full((1, 1, 2, 2, 2), 10.0))

    def test_conv2d_audio_shape(self):
        y = F.conv2d(np.zeros((1, 1, 64, 124)), np.zeros((16, 1, 3, 3)), None, 1, 1)
        assert y.shape == (1, 16, 64, 124)

    def test_zero_weights_bias(self):
        y = F.conv2d(RNG.normal(size=(2, 3, 5, 6)), np.zeros((4, 3, 3, 3)), np.full(4, 7.0), 1, 1)
        np.testing.assert_array_equal(y.data, 7.0)

    @pytest.mark.parametrize("stride,pad", [((1, 1), (0, 0)), ((2, 1), (1, 2)), ((3, 2), (2, 0))])
    def test_conv2d_matches_loops(self, stride, pad):
        x, w, b = RNG.normal(size=(2, 3, 9, 8)), RNG.normal(size=(4, 3, 3, 2)), RNG.normal(size=4)
        np.testing.assert_allclose(F.conv2d(x, w, b, stride, pad).data, naive_conv(x, w, b, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [((1, 1, 1), (1, 1, 1)), ((1, 2, 2), (3, 3, 3)), ((2, 1, 3), (0, 1, 2))])
    def test_conv3d_matches_loops(self, stride, pad):
        k = (7, 7, 7) if pad == (3, 3, 3) else (3, 2, 3)
        x, w, b = RNG.normal(size=(1, 2, 5, 9, 8)), RNG.normal(size=(3, 2, *k)), RNG.normal(size=3)
        np.testing.assert_allclose(F.conv3d(x, w, b, stride, pad).data, naive_conv(x, w, b, stride, pad), atol=1e-11)

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.integers(1, 9), min_size=3, max_size=3),
        st.lists(st.integers(1, 4), min_size=3, max_size=3),
        st.lists(st.integers(1, 3), min_size=3, max_size=3),
        st.lists(st.integers(0, 2), min_size=3, max_size=3),
    )
    def test_output_extent_formula(self, size, kernel, stride, pad):
        if any(k > n + 2 * p for n, k, p in zip(size, kernel, pad)):
            with pytest.raises(ShapeError):
                F.conv3d(np.zeros((1, 1, *size)), np.zeros((1, 1, *kernel)), None, stride, pad)
            return
        y = F.conv3d(np.zeros((1, 1, *size)), np.zeros((2, 1, *kernel)), None, stride, pad)
        assert y.shape[2:] == tuple((n + 2 * p - k) // s + 1 for n, k, s, p in zip(size, kernel, stride, pad))

    def test_channel_mismatch_message(self):
        with pytest.raises(ShapeError, match="channels"):
            F.conv3d(np.zeros((1, 2, 4, 4, 4)), np.zeros((1, 3, 1, 1, 1)))

    def test_oversized_kernel_message(self):
        with pytest.raises(ShapeError, match="kernel extent 7 exceeds padded input extent 4"):
            F.conv3d(np.zeros((1, 1, 4, 4, 4)), np.zeros((1, 1, 7, 1, 1)))

    def test_bad_stride(self):
        with pytest.raises(ShapeError, match="strides"):
            F.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 1, 1)), None, 0)

    def test_rank_checks(self):
        with pytest.raises(ShapeError):
            F.conv3d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 1, 1)))
        with pytest.raises(ShapeError):
            F.conv2d(np.zeros((1, 1, 4, 4, 4)), np.zeros((1, 1, 1, 1, 1)))


class TestPooling:
    def test_window_max(self):
        x = np.arange(1.0, 9.0).reshape(1, 1, 2, 2, 2)
        assert F.max_pool_nd(x, 2, 2, 0).data.item() == 8.0

    def test_constant(self):
        y = F.maxpool3d(np.full((1, 2, 4, 6, 6), 3.5))
        np.testing.assert_array_equal(y.data, 3.5)

    def test_full_size_pool_shape_arithmetic(self):
        # the full-size activation would be 6.6 GB, so check the extent formula
        assert tuple(output_extent(n, 3, s, 1) for n, s in zip((64, 112, 112), (1, 2, 2))) == (64, 56, 56)
        y = F.maxpool3d(np.zeros((1, 2, 6, 14, 14)))
        assert y.shape == (1, 2, 6, 7, 7)

    def test_matches_loops(self):
        x = RNG.normal(size=(2, 3, 5, 7, 6))
        np.testing.assert_array_equal(F.maxpool3d(x).data, naive_maxpool(x, (3, 3, 3), (1, 2, 2), (1, 1, 1)))

    def test_tie_goes_to_first_in_scan_order(self):
        x = Tensor(np.array([[[[1.0, 3.0], [3.0, 3.0]]]]), requires_grad=True)
        F.maxpool2d(x, 2).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[0.0, 1.0], [0.0, 0.0]])


class TestAdaptivePool:
    def test_mean(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 2, 2)
        assert F.adaptive_avg_pool3d(x).data.item() == 2.5

    def test_gradient_spreads_evenly(self):
        x = Tensor(RNG.normal(size=(1, 2, 2, 3, 4)), requires_grad=True)
        F.adaptive_avg_pool3d(x).sum().backward()
        np.testing.assert_allclose(x.grad, 1.0 / 24.0)


class TestLinear:
    def test_identity(self):
        x = RNG.normal(size=(3, 4))
        np.testing.assert_array_equal(F.linear(x, np.eye(4), np.zeros(4)).data, x)

    def test_example(self):
        np.testing.assert_array_equal(F.linear(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([0.5])).data, [[3.5]])

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            F.linear(np.zeros((2, 3)), np.zeros((4, 1)))


class TestAttention:
    def test_channel_attention_zero_weights_halve(self):
        x = RNG.normal(size=(2, 8, 2, 3, 3))
        y = F.channel_attention(x, np.zeros((8, 2)), np.zeros(2), np.zeros((2, 8)), np.zeros(8))
        np.testing.assert_allclose(y.data, 0.5 * x, rtol=0, atol=0)

    def test_channel_attention_matches_numpy(self):
        x = RNG.normal(size=(2, 8, 2, 3, 3))
        w1, b1, w2, b2 = RNG.normal(size=(8, 2)), RNG.normal(size=2), RNG.normal(size=(2, 8)), RNG.normal(size=8)
        squeeze = x.mean(axis=(2, 3, 4))
        gate = 1.0 / (1.0 + np.exp(-(np.maximum(squeeze @ w1 + b1, 0.0) @ w2 + b2)))
        np.testing.assert_allclose(F.channel_attention(x, w1, b1, w2, b2).data, x * gate[:, :, None, None, None], atol=1e-14)

    def test_channel_attention_shrinks(self):
        x = RNG.normal(size=(2, 8, 2, 3, 3)) * 5
        y = F.channel_attention(x, RNG.normal(size=(8, 2)), np.zeros(2), RNG.normal(size=(2, 8)), np.zeros(8))
        assert np.all(np.abs(y.data) <= np.abs(x))

    def test_temporal_single_frame(self):
        x = RNG.normal(size=(2, 4, 1))
        y, w = F.temporal_attention(x, RNG.normal(size=(4, 3)), RNG.normal(size=3), return_weights=True)
        np.testing.assert_array_equal(w.data, 1.0)
        np.testing.assert_array_equal(y.data, x[:, :, 0])

    def test_temporal_identical_frames(self):
        frame = RNG.normal(size=(2, 4, 1))
        y = F.temporal_attention(np.repeat(frame, 7, axis=2), RNG.normal(size=(4, 3)), RNG.normal(size=3))
        np.testing.assert_allclose(y.data, frame[:, :, 0], atol=1e-14)

    def test_temporal_weights_normalised(self):
        for seed in range(20):
            r = np.random.default_rng(seed)
            _, w = F.temporal_attention(r.normal(size=(3, 5, 9)), r.normal(size=(5, 4)) * 3, r.normal(size=4) * 3, return_weights=True)
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-12)


class TestLstm:
    def test_matches_numpy_recurrence(self):
        n, t, f, h = 2, 5, 3, 4
        x, wi, wh, b = RNG.normal(size=(n, t, f)), RNG.normal(size=(f, 4 * h)), RNG.normal(size=(h, 4 * h)), RNG.normal(size=4 * h)
        sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
        hs, cs = np.zeros((n, h)), np.zeros((n, h))
        for step in range(t):
            z = x[:, step] @ wi + hs @ wh + b
            i, fg, g, o = sig(z[:, :h]), sig(z[:, h : 2 * h]), np.tanh(z[:, 2 * h : 3 * h]), sig(z[:, 3 * h :])
            cs = fg * cs + i * g
            hs = o * np.tanh(cs)
        np.testing.assert_allclose(F.lstm(x, wi, wh, b).data, hs, atol=1e-14)


FUNCTIONAL_OPS = [o[0] for o in OPS if o[0] not in {
    "add", "sub", "mul", "div", "power", "power_frac", "abs", "exp", "log", "tanh", "relu", "sigmoid",
    "softmax0", "softmax1", "sum_axis", "mean_keep", "reshape", "transpose", "getitem_slice",
    "getitem_fancy", "concat", "stack", "matmul", "neg",
}]


@pytest.mark.parametrize("name", FUNCTIONAL_OPS)
def test_layer_gradients(name):
    assert check_op(name) < OP_TOL

"""Tensor engine: op oracles, invariants and finite-difference gradients."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prnet import tensor as T
from prnet.tensor import OpError, Tensor, grad_check


def signed(rng, shape):
    # |x| in [0.1, 1] keeps ReLU and L1 away from their kinks
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


finite = st.floats(-10, 10, allow_nan=False, width=64)


class TestTensorBasics:
    def test_rejects_non_finite_external_input(self):
        with pytest.raises(OpError):
            Tensor([1.0, np.nan])
        with pytest.raises(OpError):
            Tensor([np.inf])

    def test_default_dtype_is_float32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_float64_input_keeps_dtype(self):
        assert Tensor(np.zeros(3)).dtype == np.float64

    def test_backward_needs_scalar(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 2, 2)), requires_grad=True)
        with pytest.raises(OpError):
            T.relu(x).backward()

    def test_gradient_accumulates_over_shared_use(self):
        x = Tensor(np.full((1, 1, 2, 2), 3.0), requires_grad=True)
        T.sum_all(T.add(x, x)).backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 2, 2), 2.0))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with T.no_grad():
            y = T.relu(x)
        assert not y.requires_grad and y._parents == ()

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_debug_nans_catches_internal_overflow(self):
        T.set_debug_nans(True)
        try:
            big = Tensor(np.full((1, 1, 1, 1), 1e38, np.float32))
            with pytest.raises(OpError, match="mul"):
                T.mul(big, big)
        finally:
            T.set_debug_nans(False)

    def test_shape_mismatch_names_operation(self):
        with pytest.raises(OpError, match="add"):
            T.add(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 2, 3))))


class TestConv2d:
    def test_all_ones_counts_overlap(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, w, Tensor(np.zeros(1)), padding=1).data[0, 0]
        assert out[1, 1] == 9.0
        assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4.0

    def test_center_one_hot_is_identity(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 7)))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1.0
        out = T.conv2d(x, Tensor(w), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_direct_loops(self, rng):
        x = rng.normal(size=(1, 2, 4, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ref = np.zeros((1, 3, 4, 5))
        for o in range(3):
            for i in range(4):
                for j in range(5):
                    ref[0, o, i, j] = (xp[0, :, i:i + 3, j:j + 3] * w[o]).sum() + b[o]
        got = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_replicate_padding_preserves_constants(self, rng):
        x = Tensor(np.full((1, 2, 6, 5), 0.7))
        w = Tensor(rng.normal(size=(4, 2, 3, 3)))
        out = T.conv2d(x, w, Tensor(np.zeros(4)), padding_mode="replicate").data
        assert np.ptp(out, axis=(2, 3)).max() < 1e-12

    def test_channel_mismatch_names_both_shapes(self):
        with pytest.raises(OpError, match=r"conv2d.*\(1, 2, 4, 4\).*\(1, 3, 3, 3\)|conv2d.*\(1, 3, 3, 3\).*\(1, 2, 4, 4\)"):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))), Tensor(np.zeros(1)))

    @pytest.mark.parametrize("mode", ["zeros", "replicate"])
    def test_gradient_vs_finite_differences(self, rng, t64, mode):
        x = t64(signed(rng, (2, 3, 6, 6)))
        w = t64(rng.normal(0, 0.3, (4, 3, 3, 3)))
        b = t64(rng.normal(0, 0.3, 4))
        target = t64(rng.normal(size=(2, 4, 6, 6)) + 3.0)
        rep = grad_check(lambda x, w, b: T.l1_loss(T.conv2d(x, w, b, 1, mode), target), [x, w, b])
        assert rep["passed"], rep


class TestPoolingAndUpsampling:
    def test_avg_pool_block_mean(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])[None, None])
        assert T.avg_pool2(x).data.item() == 2.5

    def test_avg_pool_rejects_odd(self):
        with pytest.raises(OpError):
            T.avg_pool2(Tensor(np.zeros((1, 1, 3, 4))))

    def test_upsample_half_pixel_row(self):
        out = T.upsample_bilinear2(Tensor(np.array([[[[0.0, 1.0]]]]))).data
        np.testing.assert_allclose(out[0, 0, 0], [0, 0.25, 0.75, 1])
        assert out.shape == (1, 1, 2, 4)

    @given(c=finite, h=st.integers(1, 5), w=st.integers(1, 5))
    @settings(max_examples=30, deadline=None)
    def test_pool_then_upsample_preserves_constants(self, c, h, w):
        x = Tensor(np.full((1, 2, 2 * h, 2 * w), c))
        y = T.upsample_bilinear2(T.avg_pool2(x))
        np.testing.assert_array_equal(y.data, x.data)

    def test_avg_pool_gradient_spreads_quarter(self):
        x = Tensor(np.zeros((1, 1, 4, 4)), requires_grad=True)
        T.sum_all(T.avg_pool2(x)).backward()
        np.testing.assert_array_equal(x.grad, np.full((1, 1, 4, 4), 0.25))

    def test_avg_pool_gradient(self, rng, t64):
        m = t64(rng.normal(size=(1, 2, 2, 2)))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.avg_pool2(a), m)), [t64(signed(rng, (1, 2, 4, 4)))])
        assert rep["passed"], rep

    def test_upsample_gradient(self, rng, t64):
        m = t64(rng.normal(size=(1, 1, 6, 6)))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.upsample_bilinear2(a), m)), [t64(signed(rng, (1, 1, 3, 3)))])
        assert rep["passed"], rep


class TestRot90:
    def test_distinct_entries_land_counter_clockwise(self):
        x = np.arange(6.0).reshape(1, 1, 2, 3)
        out = T.rot90(Tensor(x), 1).data
        assert out.shape == (1, 1, 3, 2)
        # counter-clockwise: top row becomes left column read bottom-up
        np.testing.assert_array_equal(out[0, 0], [[2, 5], [1, 4], [0, 3]])

    def test_zero_turns_is_identity(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 4)))
        np.testing.assert_array_equal(T.rot90(x, 0).data, x.data)

    @given(arrays(np.float64, (1, 2, 3, 5), elements=finite), st.integers(0, 3))
    @settings(max_examples=40, deadline=None)
    def test_inverse_rotation_restores(self, x, a):
        back = T.rot90(T.rot90(Tensor(x), a), (4 - a) % 4)
        np.testing.assert_array_equal(back.data, x)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_gradient(self, rng, t64, k):
        shape = (1, 2, 5, 3) if k % 2 else (1, 2, 3, 5)
        m = t64(rng.normal(size=shape))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.rot90(a, k), m)), [t64(signed(rng, (1, 2, 3, 5)))])
        assert rep["passed"], rep

    def test_rejects_bad_turns(self):
        with pytest.raises(OpError):
            T.rot90(Tensor(np.zeros((1, 1, 2, 2))), 4)


class TestChannelSoftmax:
    def test_uniform_input(self):
        out = T.channel_softmax(Tensor(np.zeros((1, 4, 2, 2)))).data
        np.testing.assert_allclose(out, 0.25)

    def test_sums_to_one_and_positive(self, rng):
        out = T.channel_softmax(Tensor(rng.normal(0, 5, (2, 25, 4, 3)), )).data
        assert out.min() > 0
        assert np.abs(out.sum(axis=1) - 1).max() <= 1e-6

    def test_dominant_logit(self):
        x = np.zeros((1, 25, 1, 1))
        x[0, 7] = 50.0
        out = T.channel_softmax(Tensor(x)).data
        assert out[0, 7, 0, 0] >= 1 - 1e-12

    def test_large_logits_stay_finite(self):
        out = T.channel_softmax(Tensor(np.full((1, 3, 1, 1), 1e4))).data
        np.testing.assert_allclose(out, 1 / 3)

    def test_gradient(self, rng, t64):
        m = t64(rng.normal(size=(2, 5, 3, 3)))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.channel_softmax(a), m)), [t64(signed(rng, (2, 5, 3, 3)))])
        assert rep["passed"], rep


class TestElementwiseAndPlumbing:
    def test_relu_gradient_is_exact_away_from_kink(self, rng, t64):
        rep = grad_check(lambda a: T.sum_all(T.relu(a)), [t64(signed(rng, (1, 2, 4, 4)))])
        assert rep["max_error"] < 1e-6

    def test_sigmoid_extremes(self):
        s = T.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0]))).data
        np.testing.assert_array_equal(s, [0.0, 0.5, 1.0])

    @pytest.mark.parametrize("name", ["add", "sub", "mul"])
    def test_binary_gradients(self, rng, t64, name):
        op = getattr(T, name)
        m = t64(rng.normal(size=(1, 2, 3, 4)))
        rep = grad_check(lambda a, b: T.sum_all(T.mul(op(a, b), m)),
                         [t64(signed(rng, (1, 2, 3, 4))), t64(signed(rng, (1, 2, 3, 4)))])
        assert rep["passed"], rep

    def test_sigmoid_gradient(self, rng, t64):
        m = t64(rng.normal(size=(1, 2, 4, 4)))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.sigmoid(a), m)), [t64(signed(rng, (1, 2, 4, 4)))])
        assert rep["passed"], rep

    def test_replication_pad_values(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        out = T.replication_pad(x, 1, 0, 0, 1).data[0, 0]
        np.testing.assert_array_equal(out, [[1, 1, 2], [3, 3, 4], [3, 3, 4]])

    def test_replication_pad_of_constant_is_constant(self):
        out = T.replication_pad(Tensor(np.full((1, 1, 2, 3), 5.0)), 2, 1, 3, 0).data
        assert out.shape == (1, 1, 5, 6) and np.all(out == 5.0)

    def test_replication_pad_gradient_accumulates_at_edges(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        T.sum_all(T.replication_pad(x, 1, 1, 1, 1)).backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[4, 4], [4, 4]])

    def test_replication_pad_gradient(self, rng, t64):
        m = t64(rng.normal(size=(1, 2, 7, 7)))
        rep = grad_check(lambda a: T.sum_all(T.mul(T.replication_pad(a, 1, 2, 3, 1), m)),
                         [t64(signed(rng, (1, 2, 3, 4)))])
        assert rep["passed"], rep

    def test_concat_and_crop(self, rng):
        a, b = rng.normal(size=(1, 2, 3, 4)), rng.normal(size=(1, 1, 3, 4))
        cat = T.concat([Tensor(a), Tensor(b)]).data
        np.testing.assert_array_equal(cat, np.concatenate([a, b], axis=1))
        np.testing.assert_array_equal(T.crop(Tensor(a), 1, 2, 2, 2).data, a[:, :, 1:3, 2:4])

    def test_crop_out_of_bounds(self):
        with pytest.raises(OpError):
            T.crop(Tensor(np.zeros((1, 1, 3, 3))), 2, 0, 2, 3)

    def test_l1_loss_value_and_tie_subgradient(self):
        p = Tensor(np.array([[[[1.0, 2.0]]]]), requires_grad=True)
        loss = T.l1_loss(p, Tensor(np.array([[[[1.0, 0.0]]]])))
        assert loss.item() == 1.0
        loss.backward()
        np.testing.assert_array_equal(p.grad[0, 0, 0], [0.0, 0.5])

    def test_l1_gradient(self, rng, t64):
        target = t64(rng.normal(size=(1, 2, 3, 4)) + 2.0)
        rep = grad_check(lambda a: T.l1_loss(a, target), [t64(signed(rng, (1, 2, 3, 4)))])
        assert rep["passed"], rep


class TestGradCheck:
    def test_non_scalar_output_is_error(self, t64):
        with pytest.raises(OpError):
            grad_check(lambda a: T.relu(a), [t64(np.ones((1, 1, 2, 2)))])

    def test_detects_wrong_gradient(self, t64):
        def bad_square(a):
            return Tensor._from_op(a.data ** 2, (a,), lambda g: (g * a.data,), "bad")  # missing factor 2

        rep = grad_check(lambda a: T.sum_all(bad_square(a)), [t64(np.full((1, 1, 2, 2), 0.5))])
        assert not rep["passed"] and rep["max_error"] > 0.3

    def test_reports_one_error_per_input(self, rng, t64):
        rep = grad_check(lambda a, b: T.sum_all(T.mul(a, b)),
                         [t64(signed(rng, (1, 1, 2, 2))), t64(signed(rng, (1, 1, 2, 2)))])
        assert len(rep["errors"]) == 2

"""AdaCoF warp against direct oracles and the loop reference."""
import numpy as np
import pytest

from prnet import tensor as T
from prnet.adacof import WarpParams, adacof_warp, adacof_warp_reference
from prnet.selftest import random_warp_instance
from prnet.tensor import OpError, Tensor, grad_check

F = 5


def field(H, W, weight=None, alpha=0.0, beta=0.0, taps=F * F):
    w = np.zeros((1, taps, H, W)) if weight is None else weight
    return WarpParams(Tensor(w), Tensor(np.full((1, taps, H, W), float(alpha))),
                      Tensor(np.full((1, taps, H, W), float(beta))), int(round(taps ** 0.5)), 1)


def padded(img, p=2):
    return T.replication_pad(Tensor(img), p, p, p, p)


def center_one_hot(H, W):
    w = np.zeros((1, F * F, H, W))
    w[0, 2 * F + 2] = 1.0
    return w


class TestIdentityAndOracles:
    def test_center_tap_reproduces_image(self, rng):
        img = rng.uniform(0, 1, (1, 3, 6, 7))
        out = adacof_warp(padded(img), field(6, 7, center_one_hot(6, 7)))
        np.testing.assert_array_equal(out.data, img)

    def test_uniform_weights_are_box_filter(self, rng):
        img = rng.uniform(0, 1, (1, 3, 5, 6))
        out = adacof_warp(padded(img), field(5, 6, np.full((1, 25, 5, 6), 1 / 25)))
        xp = np.pad(img, ((0, 0), (0, 0), (2, 2), (2, 2)), mode="edge")
        box = np.zeros_like(img)
        for i in range(5):
            for j in range(6):
                box[0, :, i, j] = xp[0, :, i:i + 5, j:j + 5].mean(axis=(1, 2))
        np.testing.assert_allclose(out.data, box, atol=1e-12)

    def test_alpha_one_samples_next_row(self, rng):
        img = rng.uniform(0, 1, (1, 3, 5, 4))
        out = adacof_warp(padded(img), field(5, 4, center_one_hot(5, 4), alpha=1.0))
        expected = np.concatenate([img[:, :, 1:], img[:, :, -1:]], axis=2)
        np.testing.assert_array_equal(out.data, expected)

    def test_beta_one_samples_next_column(self, rng):
        img = rng.uniform(0, 1, (1, 3, 4, 5))
        out = adacof_warp(padded(img), field(4, 5, center_one_hot(4, 5), beta=1.0))
        expected = np.concatenate([img[:, :, :, 1:], img[:, :, :, -1:]], axis=3)
        np.testing.assert_array_equal(out.data, expected)

    def test_half_offset_averages_neighbours(self):
        img = np.arange(12.0).reshape(1, 1, 3, 4).repeat(3, axis=1)
        out = adacof_warp(padded(img), field(3, 4, center_one_hot(3, 4), beta=0.5))
        np.testing.assert_allclose(out.data[0, 0, 0, :3], [0.5, 1.5, 2.5])

    def test_constant_image_stays_constant_for_any_field(self, rng):
        img = np.full((1, 3, 6, 6), 0.4)
        w = rng.uniform(0, 1, (1, 25, 6, 6))
        w /= w.sum(axis=1, keepdims=True)
        params = WarpParams(Tensor(w), Tensor(rng.normal(0, 3, (1, 25, 6, 6))),
                            Tensor(rng.normal(0, 3, (1, 25, 6, 6))))
        np.testing.assert_allclose(adacof_warp(padded(img), params).data, 0.4, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("k", [3, 5])
    def test_matches_reference(self, seed, k):
        rng = np.random.default_rng(seed)
        image, params = random_warp_instance(rng, k, 8, 6)
        diff = np.abs(adacof_warp(image, params).data - adacof_warp_reference(image, params).data)
        assert diff.max() <= 1e-6

    def test_matches_reference_with_dilation_and_batch(self, rng):
        p = 2 * (3 - 1) // 2
        image = Tensor(rng.uniform(0, 1, (2, 3, 5 + 2 * p, 4 + 2 * p)))
        w = rng.uniform(0, 1, (2, 9, 5, 4))
        params = WarpParams(Tensor(w / w.sum(axis=1, keepdims=True)), Tensor(rng.normal(0, 2, (2, 9, 5, 4))),
                            Tensor(rng.normal(0, 2, (2, 9, 5, 4))), 3, 2)
        np.testing.assert_allclose(adacof_warp(image, params).data,
                                   adacof_warp_reference(image, params).data, atol=1e-12)

    def test_identity_matches_reference(self, rng):
        img = padded(rng.uniform(0, 1, (1, 3, 4, 4)))
        params = field(4, 4, center_one_hot(4, 4))
        np.testing.assert_array_equal(adacof_warp(img, params).data, adacof_warp_reference(img, params).data)


class TestErrors:
    def test_tap_count_mismatch(self):
        with pytest.raises(OpError, match="adacof_warp"):
            adacof_warp(padded(np.zeros((1, 3, 4, 4))), field(4, 4, taps=16))

    def test_inconsistent_padding(self):
        with pytest.raises(OpError):
            adacof_warp(padded(np.zeros((1, 3, 4, 4)), p=1), field(4, 4))

    def test_differing_field_shapes(self):
        params = WarpParams(Tensor(np.zeros((1, 25, 4, 4))), Tensor(np.zeros((1, 25, 4, 5))),
                            Tensor(np.zeros((1, 25, 4, 4))))
        with pytest.raises(OpError):
            adacof_warp(padded(np.zeros((1, 3, 4, 4))), params)


class TestGradients:
    def off_integer(self, rng, shape):
        return rng.integers(-2, 3, shape) + rng.uniform(0.1, 0.9, shape)

    def test_alpha_gradient_of_sum(self, rng, t64):
        H, W = 4, 5
        image = t64(rng.uniform(0, 1, (1, 3, H + 4, W + 4)))
        w = rng.uniform(0.05, 1, (1, 25, H, W))
        w, beta = t64(w / w.sum(axis=1, keepdims=True)), t64(self.off_integer(rng, (1, 25, H, W)))
        alpha = t64(self.off_integer(rng, (1, 25, H, W)))
        rep = grad_check(lambda a: T.sum_all(adacof_warp(image, WarpParams(w, a, beta))), [alpha])
        assert rep["passed"], rep

    def test_all_input_gradients(self, rng, t64):
        H, W = 3, 4
        image = t64(rng.uniform(0, 1, (1, 3, H + 4, W + 4)))
        w = rng.uniform(0.05, 1, (1, 25, H, W))
        w = t64(w / w.sum(axis=1, keepdims=True))
        alpha, beta = t64(self.off_integer(rng, (1, 25, H, W))), t64(self.off_integer(rng, (1, 25, H, W)))
        m = t64(rng.normal(size=(1, 3, H, W)))
        rep = grad_check(lambda i, w_, a, b: T.sum_all(T.mul(adacof_warp(i, WarpParams(w_, a, b)), m)),
                         [image, w, alpha, beta])
        assert rep["passed"], rep

    def test_offset_gradient_zero_when_clamped_outside(self, t64):
        image = t64(np.random.default_rng(0).uniform(0, 1, (1, 3, 6, 6)))
        w = t64(center_one_hot(2, 2))
        alpha = Tensor(np.full((1, 25, 2, 2), 50.0), requires_grad=True)
        beta = t64(np.zeros((1, 25, 2, 2)))
        T.sum_all(adacof_warp(image, WarpParams(w, alpha, beta))).backward()
        assert np.all(alpha.grad == 0)

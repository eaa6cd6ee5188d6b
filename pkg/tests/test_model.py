"""Architecture: golden parameter counts, wiring and fusion."""
import numpy as np
import pytest

from prnet import tensor as T
from prnet.model import (ConfigError, ModelConfig, build, count_params, forward_features, fuse_features,
                         layer_plan, param_shapes, reduction_percent)
from prnet.selftest import EXPECTED_COUNTS, EXPECTED_REDUCTIONS, shared_weight_encoders
from prnet.tensor import OpError, Tensor


def group_count(config, prefix):
    return sum(int(np.prod(s)) for n, s in param_shapes(config).items() if n.startswith(prefix))


class TestParameterCounts:
    @pytest.mark.parametrize("label,expected", sorted(EXPECTED_COUNTS.items()))
    def test_table_counts(self, label, expected):
        assert count_params(ModelConfig.from_label(label)) == expected

    def test_built_model_agrees_with_plan(self):
        cfg = ModelConfig(encoders=2)
        assert count_params(build(cfg)) == count_params(cfg)

    def test_component_totals(self):
        cfg = ModelConfig(encoders=1)
        assert group_count(cfg, "encoder.1.") == 481_632
        assert group_count(cfg, "decoder.") == 774_912
        kernel = sum(group_count(cfg, f"subnet.{s}.") for s in
                     ("weight1", "alpha1", "beta1", "weight2", "alpha2", "beta2"))
        assert kernel == 563_586
        assert group_count(cfg, "subnet.occlusion.") == 111_361

    def test_each_encoder_adds_one_stack(self):
        counts = [count_params(ModelConfig(encoders=n)) for n in (1, 2, 3, 4)]
        assert np.diff(counts).tolist() == [481_632] * 3

    @pytest.mark.parametrize("label,expected", sorted(EXPECTED_REDUCTIONS.items()))
    def test_reductions(self, label, expected):
        assert abs(reduction_percent(ModelConfig.from_label(label)) - expected) <= 0.05

    def test_prnet_drops_most_baseline_tensors(self):
        base = set(param_shapes(ModelConfig(variant="adacof_baseline")).items())
        small = set(param_shapes(ModelConfig(encoders=1)).items())
        dropped = sum(int(np.prod(s)) for _, s in base - small)
        assert dropped / count_params(ModelConfig(variant="adacof_baseline")) >= 0.90


class TestConfig:
    def test_rotate_needs_four_encoders(self):
        with pytest.raises(ConfigError):
            ModelConfig(encoders=2, rotate=True)

    @pytest.mark.parametrize("n", [0, 5])
    def test_encoder_range(self, n):
        with pytest.raises(ConfigError):
            ModelConfig(encoders=n)

    def test_labels_round_trip(self):
        for label in EXPECTED_COUNTS:
            assert ModelConfig.from_label(label).label == label

    def test_dict_round_trip(self):
        cfg = ModelConfig(encoders=4, rotate=True)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg

    def test_angles(self):
        cfg = ModelConfig(encoders=4, rotate=True)
        assert [cfg.angle_of(e) for e in (1, 2, 3, 4)] == [0, 1, 2, 3]
        assert ModelConfig(encoders=4).angle_of(3) == 0

    def test_size_multiples(self):
        assert ModelConfig().size_multiple == 8
        assert ModelConfig(variant="adacof_baseline").size_multiple == 32


class TestBuild:
    def test_same_seed_is_bitwise_identical(self):
        a = build(ModelConfig(encoders=4, rotate=True), seed=3)
        b = build(ModelConfig(encoders=4, rotate=True), seed=3)
        assert list(a.params) == list(b.params)
        assert all(np.array_equal(a.params[n].data, b.params[n].data) for n in a.params)

    def test_different_seed_differs(self):
        a, b = build(ModelConfig(encoders=1), seed=0), build(ModelConfig(encoders=1), seed=1)
        assert not np.array_equal(a.params["decoder.deconv3.conv0.weight"].data,
                                  b.params["decoder.deconv3.conv0.weight"].data)

    def test_baseline_channel_plan(self):
        plan = {n: (cin, cout) for n, cin, cout in layer_plan(ModelConfig(variant="adacof_baseline"))}
        assert [plan[f"encoder.1.block{L}.conv2"][1] for L in range(1, 6)] == [32, 64, 128, 256, 512]
        assert plan["decoder.deconv5.conv0"] == (512, 512)
        assert plan["decoder.upsample5.conv0"] == (512, 512)
        assert plan["decoder.deconv4.conv0"] == (512, 256)
        assert plan["decoder.deconv3.conv0"] == (256, 128)
        assert plan["decoder.deconv2.conv0"] == (128, 64)
        assert sum(n.startswith("subnet.") and n.endswith("conv0") for n in plan) == 7

    def test_names_unique_and_ordered(self):
        names = [n for n, _, _ in layer_plan(ModelConfig(encoders=3))]
        assert len(names) == len(set(names))
        assert names[0] == "encoder.1.block1.conv0" and names[-1] == "subnet.occlusion.conv3"

    def test_rotate_config_does_not_change_shapes(self):
        assert param_shapes(ModelConfig(encoders=4)) == param_shapes(ModelConfig(encoders=4, rotate=True))


class TestFusion:
    def test_single_encoder_passes_through(self, rng):
        m = Tensor(rng.normal(size=(1, 4, 6, 8)))
        np.testing.assert_array_equal(fuse_features([m], [0]).data, m.data)

    def test_back_rotation_sums_consistently(self, rng):
        base = rng.normal(size=(1, 2, 4, 6))
        maps = [T.rot90(Tensor(base), a) for a in range(4)]
        fused = fuse_features(maps, [0, 1, 2, 3])
        np.testing.assert_allclose(fused.data, 4 * base)

    def test_mismatched_shapes_error(self):
        with pytest.raises(OpError):
            fuse_features([Tensor(np.zeros((1, 1, 4, 6))), Tensor(np.zeros((1, 1, 4, 6)))], [0, 1])

    def test_shared_weights_on_constant_input(self):
        model = build(ModelConfig(encoders=4, rotate=True), seed=0)
        shared_weight_encoders(model)
        x = Tensor(np.full((1, 6, 192, 256), 0.3, np.float32))
        with T.no_grad():
            maps = [model.encode(e, T.rot90(x, e - 1))[1] for e in (1, 2, 3, 4)]
            fused = fuse_features(maps, [0, 1, 2, 3])
        assert maps[1].shape[2:] == (128, 96)
        assert fused.shape[2:] == (96, 128)
        assert np.abs(fused.data - 4 * maps[0].data).max() <= 1e-5


class TestForwardFeatures:
    def test_output_shapes_and_ranges(self, prnet4_rot, rng):
        f1 = Tensor(rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32))
        f2 = Tensor(rng.uniform(0, 1, (1, 3, 64, 64)).astype(np.float32))
        with T.no_grad():
            kf = forward_features(prnet4_rot, f1, f2)
        assert kf.weight1.shape == (1, 25, 64, 64) and kf.occlusion.shape == (1, 1, 64, 64)
        for w in (kf.weight1, kf.weight2):
            assert w.data.min() >= 0 and np.abs(w.data.sum(axis=1) - 1).max() <= 1e-6
        assert 0 < kf.occlusion.data.min() and kf.occlusion.data.max() < 1

    def test_rejects_non_multiple_of_eight(self, prnet1):
        x = Tensor(np.zeros((1, 3, 20, 24), np.float32))
        with pytest.raises(OpError):
            forward_features(prnet1, x, x)

    def test_rotation_wiring_invisible_on_constant_input(self):
        plain = build(ModelConfig(encoders=4), seed=5)
        rotated = build(ModelConfig(encoders=4, rotate=True), seed=5)
        x = Tensor(np.full((1, 3, 32, 48), 0.6, np.float32))
        with T.no_grad():
            a, b = forward_features(plain, x, x), forward_features(rotated, x, x)
        np.testing.assert_allclose(a.psi.data, b.psi.data, atol=1e-6)

    def test_diagnostics_adds_level_one_fusion(self, prnet1):
        x = Tensor(np.zeros((1, 3, 16, 16), np.float32))
        with T.no_grad():
            assert 1 in forward_features(prnet1, x, x, diagnostics=True).fused
            assert 1 not in forward_features(prnet1, x, x).fused

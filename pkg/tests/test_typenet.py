import numpy as np
import pytest

from allpairs import typenet
from allpairs.neural import ShapeError, gradcheck_model
from allpairs.rng import Stream
from allpairs.typenet import (TypeNetConfig, aggregate, audit_parameter_count,
                              build, conv_shape_trace, get_preset, presets)


class TestConfig:
    def test_default_reproduces_published_setup(self):
        cfg = TypeNetConfig()
        assert cfg.n_conv_layers == 4
        assert cfg.n_fc_layers == 4
        assert cfg.type_branches == 2
        assert cfg.n_spatial == 3
        assert cfg.n_features == 64
        assert cfg.conv_spec == ((128, 3, 1), (128, 5, 2), (128, 5, 1), (128, 3, 1))
        assert cfg.branch_activation == "identity"
        assert cfg.conv_activation == "elu"
        assert cfg.fc_activation == "elu"
        assert cfg.spatial_ops == ("identity", "maxpool3", "maxpool5")

    def test_feature_width_and_fc_widths(self):
        cfg = TypeNetConfig()
        assert cfg.feature_width == 192  # 3 x 64
        assert cfg.fc_widths == (192, 96, 48, 2)

    def test_wide_forces_conv3_stride(self):
        cfg = TypeNetConfig(wide=True)
        assert cfg.effective_conv_spec[2] == (128, 5, 2)
        assert cfg.conv_spec[2] == (128, 5, 1)  # original untouched

    def test_flatten_ablation_forces_conv3_stride(self):
        cfg = TypeNetConfig(ablation="flatten_convnet")
        assert cfg.effective_conv_spec[2] == (128, 5, 2)

    def test_round_trip_dict(self):
        cfg = get_preset("96-II-w")
        assert TypeNetConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            TypeNetConfig(ablation="resnet")
        with pytest.raises(ValueError):
            TypeNetConfig(spatial_ops=("identity", "megapool9"))
        with pytest.raises(ValueError):
            TypeNetConfig(conv_spec=())


class TestParameterCounts:
    def test_model_matches_audit_exactly(self):
        cfg = TypeNetConfig()
        model = build(cfg, (76, 76), seed=1)
        assert model.param_count() == audit_parameter_count(cfg, (76, 76))

    def test_default_is_within_2pct_of_published(self):
        audit = audit_parameter_count(TypeNetConfig(), (76, 76))
        assert abs(audit / 1.04e6 - 1.0) <= 0.02
        assert audit == 1_046_354  # frozen: conv 967,808 + BN/bias/fc terms

    def test_conv_weight_subtotal(self):
        # 1*128*9 + 128*128*25 twice + 128*128*9
        assert 128 * 9 + 2 * (128 * 128 * 25) + 128 * 128 * 9 == 967_808

    def test_flatten_ablation_is_input_size_dependent(self):
        cfg = TypeNetConfig(ablation="flatten_convnet")
        a76 = audit_parameter_count(cfg, (76, 76))
        a96 = audit_parameter_count(cfg, (96, 96))
        assert a76 != a96
        # published ConvNet comparison lists 9.9M for the 76px model
        assert abs(a76 / 9.9e6 - 1.0) <= 0.02
        # the histogram model's count does not depend on the input size
        base = TypeNetConfig()
        assert audit_parameter_count(base, (76, 76)) == audit_parameter_count(base, (96, 96))

    def test_enhanced_parallel_pool_adds_10pct(self):
        base = audit_parameter_count(TypeNetConfig(), (76, 76))
        enh = audit_parameter_count(get_preset("enhanced-parallel-pool"), (76, 76))
        assert 1.08 <= enh / base <= 1.13

    def test_audit_matches_model_across_presets(self):
        for name, cfg in presets().items():
            hw = (24, 24) if name == "probe18" else (48, 48)
            model = build(cfg, hw, seed=2)
            assert model.param_count() == audit_parameter_count(cfg, hw), name


class TestBuildAndForward:
    def test_single_spatial_branch_builds_and_runs(self):
        cfg = TypeNetConfig(conv_spec=((8, 3, 2), (8, 3, 2)), n_features=8,
                            spatial_ops=("identity",))
        assert cfg.feature_width == 8
        model = build(cfg, (24, 24), seed=3)
        probs = model.forward(np.zeros((2, 1, 24, 24), np.float32), train=True)
        assert probs.shape == (2, 2)

    def test_forward_rows_sum_to_one(self, stream):
        model = build(get_preset("tiny"), (12, 12), seed=4)
        x = stream.uniform_block(6 * 144).reshape(6, 1, 12, 12).astype(np.float32)
        probs = model.forward(x, train=True)
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6

    def test_all_black_batch_finite(self):
        model = build(get_preset("tiny"), (12, 12), seed=5)
        probs = model.forward(np.zeros((3, 1, 12, 12), np.float32), train=True)
        assert np.isfinite(probs).all()
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6

    def test_input_shape_rejected_with_trace(self):
        model = build(get_preset("tiny"), (12, 12), seed=6)
        with pytest.raises(ShapeError) as exc:
            model.forward(np.zeros((2, 1, 13, 13), np.float32))
        assert "conv" in str(exc.value)

    def test_incompatible_dims_rejected_at_build(self):
        cfg = TypeNetConfig(conv_spec=((4, 3, 2),) * 6, n_features=4,
                            spatial_ops=("identity", "maxpool5"))
        with pytest.raises(ShapeError) as exc:
            build(cfg, (12, 12), seed=7)
        assert "trace" in str(exc.value) or "conv" in str(exc.value)

    def test_shape_trace_arithmetic(self):
        trace = conv_shape_trace(TypeNetConfig(), (76, 76))
        assert trace[0] == ("input", (1, 76, 76))
        assert trace[1] == ("conv1", (128, 76, 76))
        assert trace[2] == ("conv2", (128, 38, 38))
        assert trace[4] == ("conv4", (128, 38, 38))

    def test_full_model_gradcheck_double(self, stream):
        model = build(get_preset("tiny"), (12, 12), seed=3, dtype=np.float64)
        x = stream.uniform_block(2 * 144).reshape(2, 1, 12, 12)
        report = gradcheck_model(model, x, np.array([0, 1]))
        assert max(report.values()) < 1e-4

    def test_flatten_gradcheck_double(self, stream):
        cfg = TypeNetConfig(conv_spec=((3, 3, 1), (4, 3, 2)), n_features=4,
                            spatial_ops=("identity",), ablation="flatten_convnet")
        model = build(cfg, (10, 10), seed=8, dtype=np.float64)
        x = stream.uniform_block(2 * 100).reshape(2, 1, 10, 10)
        report = gradcheck_model(model, x, np.array([1, 0]))
        assert max(report.values()) < 1e-4


class TestAggregate:
    def test_identity_branch_permutation_invariant_exact(self, stream):
        # dyadic-grid values make float sums order-independent, so the
        # invariance is exact
        t = np.round(stream.uniform_block(2 * 4 * 5 * 5).reshape(2, 4, 5, 5) * 256) / 256
        y = aggregate(t, ("identity",))
        flat = t.reshape(2, 4, 25).copy()
        order = list(range(25))
        Stream("perm", 2).shuffle(order)
        tp = flat[:, :, order].reshape(2, 4, 5, 5)
        assert np.array_equal(aggregate(tp, ("identity",)), y)

    def test_one_hot_gives_unit_indicator(self):
        t = np.zeros((1, 3, 6, 6))
        t[0, 1, 4, 2] = 1.0
        y = aggregate(t, ("identity",))
        assert np.array_equal(y, [[0.0, 1.0, 0.0]])

    def test_maxpool_branch_on_constant_map(self):
        # 3x3 stride-1 max pooling of a constant c map of h x w gives
        # (h-2)(w-2) windows, each c, so the branch sums to (h-2)(w-2)*c
        c = 0.625
        h = w = 7
        t = np.full((2, 3, h, w), c)
        y = aggregate(t, ("maxpool3",))
        assert np.allclose(y, (h - 2) * (w - 2) * c)

    def test_concatenation_order_and_width(self, stream):
        t = stream.uniform_block(2 * 4 * 6 * 6).reshape(2, 4, 6, 6)
        y = aggregate(t, ("identity", "maxpool3", "maxpool5"))
        assert y.shape == (2, 12)
        assert np.allclose(y[:, :4], t.sum(axis=(2, 3)))

    def test_model_aggregation_matches_standalone(self, stream):
        # the built model's aggregation stage equals the public function
        cfg = get_preset("tiny")
        model = build(cfg, (12, 12), seed=9, dtype=np.float64)
        x = stream.uniform_block(2 * 144).reshape(2, 1, 12, 12)
        model.forward_logits(x, train=True)
        t_nhwc = None
        # recompute the type map exactly as the model does
        c = x.reshape(2, 12, 12, 1)
        for conv, act, bn in model.conv_layers:
            c = bn.forward(act.forward(conv.forward(c, True), True), True)
        for conv, act in model.branches:
            z = act.forward(conv.forward(c, True), True)
            t_nhwc = z if t_nhwc is None else t_nhwc + z
        got = np.concatenate([ss.forward(op.forward(t_nhwc, True) if op else t_nhwc, True)
                              for op, ss in model.spatial], axis=1)
        expect = aggregate(t_nhwc.transpose(0, 3, 1, 2), cfg.spatial_ops)
        assert np.allclose(got, expect, atol=1e-12)


class TestPresets:
    def test_published_presets_resolve(self):
        ii = get_preset("II")
        assert ii.type_branches == 2 and ii.n_features == 64
        assert ii.branch_activation == "identity"
        w = get_preset("96-II-w")
        assert w.n_features == 96 and w.wide and w.type_branches == 2
        iii = get_preset("128-III")
        assert iii.n_features == 128 and iii.type_branches == 3
        assert get_preset("SmSm").branch_activation == "softmax"
        assert get_preset("SeSe").branch_activation == "selu"
        assert get_preset("flatten-convnet").ablation == "flatten_convnet"
        enh = get_preset("enhanced-parallel-pool")
        assert enh.spatial_ops == ("identity", "maxpool3", "maxpool5",
                                   "maxpool3", "avgpool3")

    def test_desk_presets(self):
        desk = get_preset("desk")
        assert desk.conv_spec[0][0] == 32 and desk.n_features == 16
        flat = get_preset("desk-flatten")
        assert flat.ablation == "flatten_convnet"
        assert flat.conv_spec == desk.conv_spec

    def test_unknown_preset_lists_available(self):
        with pytest.raises(KeyError) as exc:
            get_preset("giant")
        assert "desk" in str(exc.value)

    def test_probe18_output_classes(self):
        cfg = get_preset("probe18")
        assert cfg.output_classes == 18
        assert cfg.fc_widths[-1] == 18


class TestAblationSharing:
    def test_conv_params_identical_under_same_seed(self):
        a = build(get_preset("desk"), (48, 48), seed=42)
        b = build(get_preset("desk-flatten"), (48, 48), seed=42)
        pa = {p.name: p.value for p in a.params()}
        pb = {p.name: p.value for p in b.params()}
        for name in pa:
            if name.startswith("conv"):
                assert np.array_equal(pa[name], pb[name]), name
        assert not np.array_equal(pa["fc1.W"].shape, pb["fc1.W"].shape)

    def test_state_dict_round_trip(self):
        model = build(get_preset("tiny"), (12, 12), seed=10)
        arrays = model.state_arrays()
        model2 = build(get_preset("tiny"), (12, 12), seed=11)
        model2.load_state_arrays(arrays)
        for p, q in zip(model.params(), model2.params()):
            assert np.array_equal(p.value, q.value)

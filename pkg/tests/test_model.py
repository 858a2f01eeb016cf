"""Architecture conformance and end-to-end gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handdepth.errors import ConfigError, ShapeError
from handdepth.model import (
    Hourglass,
    ModelConfig,
    ResidualBlock,
    StackedHourglass,
    count_parameters,
)
from handdepth.tensor import Tensor, concat_features

from fdcheck import check_graph_gradients, jitter_parameters


def toy_config(num_stages=2, mask_stages=1, f=8, input_hw=64, halvings=None):
    out = input_hw // 4
    if halvings is None:
        halvings = min(4, max(1, (out & -out).bit_length() - 1))
    return ModelConfig(
        num_stages=num_stages,
        mask_stages=mask_stages,
        depth_stages=num_stages - mask_stages,
        feature_width=f,
        input_resolution=(input_hw, input_hw),
        output_resolution=(out, out),
        halvings_per_hourglass=halvings,
    )


class TestModelConfig:
    def test_defaults_match_published_setup(self):
        cfg = ModelConfig()
        assert cfg.num_stages == 6
        assert (cfg.mask_stages, cfg.depth_stages) == (3, 3)
        assert cfg.input_resolution == (256, 256)
        assert cfg.output_resolution == (64, 64)
        assert cfg.halvings_per_hourglass == 4

    def test_stage_split_must_sum(self):
        with pytest.raises(ConfigError):
            ModelConfig(num_stages=6, mask_stages=2, depth_stages=3)

    def test_at_least_one_depth_stage(self):
        with pytest.raises(ConfigError):
            ModelConfig(num_stages=1, mask_stages=1, depth_stages=0)

    def test_resolution_ratio_enforced(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_resolution=(256, 256), output_resolution=(128, 128),
                        num_stages=1, mask_stages=0, depth_stages=1)

    def test_output_divisible_by_halvings(self):
        with pytest.raises(ConfigError):
            ModelConfig(input_resolution=(24, 24), output_resolution=(6, 6),
                        num_stages=1, mask_stages=0, depth_stages=1,
                        feature_width=8, halvings_per_hourglass=2)

    def test_roundtrip_dict(self):
        cfg = toy_config()
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestResidualBlock:
    def test_shape_preserved(self):
        rng = np.random.default_rng(0)
        block = ResidualBlock(8, 8, rng)
        out = block(Tensor(rng.normal(size=(1, 8, 16, 16)).astype(np.float32)))
        assert out.shape == (1, 8, 16, 16)

    def test_width_change_via_skip_conv(self):
        rng = np.random.default_rng(1)
        block = ResidualBlock(4, 8, rng)
        out = block(Tensor(rng.normal(size=(2, 4, 8, 8)).astype(np.float32)))
        assert out.shape == (2, 8, 8, 8)

    def test_zeroed_weights_reduce_to_identity(self):
        rng = np.random.default_rng(2)
        block = ResidualBlock(8, 8, rng)
        for _, p in block.named_parameters():
            if p.data.ndim == 4:  # conv weights
                p.data[...] = 0.0
        x = np.random.default_rng(3).normal(size=(1, 8, 6, 6)).astype(np.float32)
        out = block(Tensor(x))
        np.testing.assert_array_equal(out.data, x)

    def test_width_not_divisible_by_4_rejected(self):
        with pytest.raises(ConfigError):
            ResidualBlock(8, 6, np.random.default_rng(0))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        block = ResidualBlock(8, 8, rng, dtype=np.float64)
        jitter_parameters(block, seed=41)
        x = Tensor(rng.normal(size=(1, 8, 8, 8)), requires_grad=True)
        leaves = [("input", x)] + list(block.named_parameters())
        check_graph_gradients(lambda: block(x), leaves, probe_shape=(1, 8, 8, 8))


class TestHourglass:
    def test_shape_and_bottleneck(self):
        rng = np.random.default_rng(5)
        hg = Hourglass(8, rng, halvings=4)
        out = hg(Tensor(rng.normal(size=(1, 8, 64, 64)).astype(np.float32)))
        assert out.shape == (1, 8, 64, 64)
        assert hg.last_bottleneck_hw == (4, 4)

    def test_eval_mode_deterministic(self):
        rng = np.random.default_rng(6)
        hg = Hourglass(8, rng, halvings=2).eval()
        x = Tensor(rng.normal(size=(1, 8, 16, 16)).astype(np.float32))
        a = hg(x).data.tobytes()
        b = hg(x).data.tobytes()
        assert a == b

    def test_indivisible_extent_rejected(self):
        rng = np.random.default_rng(7)
        hg = Hourglass(8, rng, halvings=3)
        with pytest.raises(ShapeError):
            hg(Tensor(np.zeros((1, 8, 12, 12), dtype=np.float32)))

    def test_gradients(self):
        rng = np.random.default_rng(8)
        hg = Hourglass(8, rng, halvings=2, dtype=np.float64)
        jitter_parameters(hg, seed=42)
        x = Tensor(rng.normal(size=(1, 8, 16, 16)), requires_grad=True)
        leaves = [("input", x)] + list(hg.named_parameters())
        check_graph_gradients(
            lambda: hg(x), leaves, probe_shape=(1, 8, 16, 16), sample_fraction=0.25
        )


class TestStackedForward:
    def test_six_stage_output_contract(self):
        cfg = toy_config(num_stages=6, mask_stages=3, f=8, input_hw=256)
        model = StackedHourglass(cfg, seed=0)
        rgb = Tensor(np.random.default_rng(9).uniform(size=(2, 3, 256, 256)).astype(np.float32))
        outs = model(rgb)
        assert len(outs) == 6
        for out in outs:
            assert out.shape == (2, 1, 64, 64)
        assert len(outs.mask_outputs) == 3 and len(outs.depth_outputs) == 3
        assert all(hw == (4, 4) for hw in model.bottleneck_reports)

    def test_single_depth_stage_config(self):
        cfg = toy_config(num_stages=1, mask_stages=0, f=8, input_hw=64)
        model = StackedHourglass(cfg, seed=0)
        rgb = Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32))
        outs = model(rgb)
        assert len(outs) == 1
        assert outs.final is outs.outputs[0]
        assert outs.final_mask is None

    def test_wrong_input_shape_rejected(self):
        cfg = toy_config()
        model = StackedHourglass(cfg, seed=0)
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 1, 64, 64), dtype=np.float32)))
        with pytest.raises(ShapeError):
            model(Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)))

    @given(
        st.integers(min_value=1, max_value=4),
        st.integers(min_value=0, max_value=3),
        st.sampled_from([8, 16]),
    )
    @settings(max_examples=12, deadline=None)
    def test_output_contract_over_random_configs(self, depth_stages, mask_stages, f):
        cfg = ModelConfig(
            num_stages=mask_stages + depth_stages,
            mask_stages=mask_stages,
            depth_stages=depth_stages,
            feature_width=f,
            input_resolution=(64, 64),
            output_resolution=(16, 16),
            halvings_per_hourglass=2,
        )
        model = StackedHourglass(cfg, seed=1).eval()
        outs = model(Tensor(np.zeros((1, 3, 64, 64), dtype=np.float32)))
        assert len(outs) == cfg.num_stages
        assert all(o.shape == (1, 1, 16, 16) for o in outs)

    def test_parameter_count_is_config_function(self):
        cfg = toy_config(num_stages=2, mask_stages=1, f=16)
        a = StackedHourglass(cfg, seed=0)
        b = StackedHourglass(cfg, seed=12345)
        assert count_parameters(a) == count_parameters(b) > 0

    def test_eval_output_independent_of_batch_composition(self):
        cfg = toy_config(num_stages=2, mask_stages=1, f=8)
        model = StackedHourglass(cfg, seed=0).eval()
        rng = np.random.default_rng(10)
        batch = rng.uniform(size=(3, 3, 64, 64)).astype(np.float32)
        together = model(Tensor(batch))
        for i in range(3):
            alone = model(Tensor(batch[i:i + 1]))
            for o_t, o_a in zip(together, alone):
                np.testing.assert_array_equal(o_t.data[i:i + 1], o_a.data)

    def test_end_to_end_gradients_toy_scale(self):
        cfg = toy_config(num_stages=2, mask_stages=1, f=8, input_hw=64)
        model = StackedHourglass(cfg, seed=2, dtype=np.float64)
        jitter_parameters(model, seed=43)
        rng = np.random.default_rng(11)
        x = Tensor(rng.uniform(size=(1, 3, 64, 64)), requires_grad=True)
        leaves = [("input", x)] + list(model.named_parameters())
        check_graph_gradients(
            lambda: concat_features(list(model(x))),
            leaves,
            probe_shape=(1, 2, 16, 16),
            sample_fraction=0.05,
        )

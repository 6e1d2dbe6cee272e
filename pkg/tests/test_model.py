import numpy as np
import pytest
from dataclasses import replace

from swin_unet3d.gradcheck import check_parameter_gradients, finite_diff_check
from swin_unet3d.model import (
    FeatureMixer,
    ModelConfig,
    PatchEmbed,
    PatchExpand,
    PatchMerge,
    PredictionHead,
    SkipMerge,
    SwinUNet3D,
    count_parameters,
    module_subtotals,
)
from swin_unet3d.tensor import ConfigError, Tensor, no_grad
from swin_unet3d.training import mse_loss

rng = np.random.default_rng(99)

TINY = ModelConfig(
    embed_dim=8,
    heads=2,
    encoder_depths=(1, 1, 1, 1),
    neck_depth=1,
    decoder_depths=(1, 1, 1, 1),
)


def param_total(module) -> int:
    return sum(p.size for _, p in module.named_parameters())


class TestFeatureMixer:
    def test_identity_initialised_mixer_is_noop(self):
        mixer = FeatureMixer(12, 8, dtype=np.float64)
        x = rng.standard_normal((2, 12, 8, 5, 6))
        assert np.array_equal(mixer(Tensor(x)).data, x)

    def test_parameter_count(self):
        assert param_total(FeatureMixer(12, 8)) == 96 * 96 + 96  # 9312

    def test_equal_sites_stay_equal(self):
        mixer = FeatureMixer(3, 2, dtype=np.float64)
        mixer.fc.weight.data = rng.standard_normal((6, 6))
        mixer.fc.bias.data = rng.standard_normal(6)
        x = rng.standard_normal((1, 3, 2, 2, 2))
        x[0, :, :, 1, 1] = x[0, :, :, 0, 0]
        out = mixer(Tensor(x)).data
        assert np.array_equal(out[0, :, :, 1, 1], out[0, :, :, 0, 0])

    def test_width_mismatch_rejected(self):
        mixer = FeatureMixer(12, 8)
        with pytest.raises(ConfigError):
            mixer(Tensor(np.zeros((1, 6, 8, 4, 4), np.float32)))

    def test_gradient(self):
        mixer = FeatureMixer(2, 3, dtype=np.float64)
        mixer.fc.weight.data = np.eye(6) + 0.1 * rng.standard_normal((6, 6))
        err = finite_diff_check(lambda t: mixer(t), Tensor(rng.standard_normal((1, 2, 3, 2, 2))))
        assert err < 1e-6


class TestPatchEmbed:
    def test_zero_weights_zero_tokens(self):
        embed = PatchEmbed(ModelConfig(), init="zeros")
        out = embed(Tensor(np.ones((1, 12, 8, 32, 32), np.float32)))
        assert out.shape == (1, 12, 8, 8, 96)
        assert np.all(out.data == 0)

    def test_token_grid_shape(self):
        embed = PatchEmbed(ModelConfig(), rng=np.random.default_rng(0))
        out = embed(Tensor(rng.standard_normal((1, 12, 8, 32, 32)).astype(np.float32)))
        assert out.shape == (1, 12, 8, 8, 96)

    def test_parameter_count(self):
        # (8*1*4*4)*96 + 96 + 96*96 + 96 = 21,696
        assert param_total(PatchEmbed(ModelConfig(), init="zeros")) == 21696

    def test_gradient(self):
        cfg = replace(TINY, patch_size=(2, 4, 4))
        embed = PatchEmbed(cfg, rng=np.random.default_rng(1), dtype=np.float64)
        err = finite_diff_check(lambda t: embed(t), Tensor(rng.standard_normal((1, 4, 8, 8, 8))))
        assert err < 1e-5


class TestPatchMergeExpand:
    def test_merge_shape_and_count(self):
        merge = PatchMerge(3, init="zeros")
        out = merge(Tensor(np.zeros((1, 1, 4, 4, 3), np.float32)))
        assert out.shape == (1, 1, 2, 2, 6)
        assert param_total(merge) == 12 * 6 + 6  # 78

    def test_merge_zero_weights(self):
        merge = PatchMerge(3, init="zeros")
        out = merge(Tensor(rng.standard_normal((1, 2, 4, 4, 3)).astype(np.float32)))
        assert np.all(out.data == 0)

    def test_merge_concatenation_order_row_major(self):
        # keep the affine identity on the first C lanes to expose the layout
        merge = PatchMerge(2, init="zeros", dtype=np.float64)
        merge.reduce.weight.data = np.zeros((8, 4))
        merge.reduce.weight.data[:4, :4] = np.eye(4)  # output = first concat segment
        x = rng.standard_normal((1, 1, 2, 2, 2))
        out = merge(Tensor(x)).data[0, 0, 0, 0]
        assert np.array_equal(out, np.concatenate([x[0, 0, 0, 0], x[0, 0, 0, 1]]))
        # swapping pixels within the 2x2 cell permutes concat segments
        merge.reduce.weight.data = np.zeros((8, 4))
        merge.reduce.weight.data[4:8, :4] = np.eye(4)  # picks segments (h1w0, h1w1)
        out2 = merge(Tensor(x)).data[0, 0, 0, 0]
        assert np.array_equal(out2[:2], x[0, 0, 1, 0])
        assert np.array_equal(out2[2:4], x[0, 0, 1, 1])

    def test_merge_pads_odd_extents(self):
        merge = PatchMerge(2, rng=np.random.default_rng(0))
        out = merge(Tensor(rng.standard_normal((1, 1, 5, 3, 2)).astype(np.float32)))
        assert out.shape == (1, 1, 3, 2, 4)

    def test_expand_shape_and_count(self):
        expand = PatchExpand(6, init="zeros")
        out = expand(Tensor(np.zeros((1, 1, 2, 2, 6), np.float32)))
        assert out.shape == (1, 1, 4, 4, 3)
        assert param_total(expand) == 6 * 12 + 12  # 84
        assert np.all(out.data == 0)

    def test_expand_odd_channels_rejected(self):
        with pytest.raises(ConfigError):
            PatchExpand(5, init="zeros")

    def test_expand_merge_shape_round_trip(self):
        x = Tensor(rng.standard_normal((1, 2, 4, 6, 4)).astype(np.float32))
        merge = PatchMerge(4, rng=np.random.default_rng(0))
        expand = PatchExpand(8, rng=np.random.default_rng(1))
        assert expand(merge(x)).shape == x.shape

    def test_gradients(self):
        merge = PatchMerge(2, rng=np.random.default_rng(2), dtype=np.float64)
        assert finite_diff_check(lambda t: merge(t), Tensor(rng.standard_normal((1, 1, 3, 4, 2)))) < 1e-5
        expand = PatchExpand(4, rng=np.random.default_rng(3), dtype=np.float64)
        assert finite_diff_check(lambda t: expand(t), Tensor(rng.standard_normal((1, 1, 2, 2, 4)))) < 1e-5


class TestSkipMerge:
    def test_add_mode_with_zero_skip(self):
        sm = SkipMerge(4, "add")
        x = rng.standard_normal((1, 1, 2, 2, 4))
        out = sm(Tensor(x), Tensor(np.zeros_like(x)))
        assert np.array_equal(out.data, x)
        assert param_total(sm) == 0

    def test_concat_mode_zero_weights(self):
        sm = SkipMerge(4, "concat", init="zeros", dtype=np.float64)
        x = rng.standard_normal((1, 1, 2, 2, 4))
        out = sm(Tensor(x), Tensor(x))
        assert np.all(out.data == 0)

    def test_both_mode_zero_weights_passes_skip(self):
        sm = SkipMerge(4, "both", init="zeros", dtype=np.float64)
        x = rng.standard_normal((1, 1, 2, 2, 4))
        skip = rng.standard_normal((1, 1, 2, 2, 4))
        out = sm(Tensor(x), Tensor(skip))
        assert np.array_equal(out.data, skip)

    def test_shape_mismatch_rejected(self):
        sm = SkipMerge(4, "add")
        with pytest.raises(ConfigError):
            sm(Tensor(np.zeros((1, 1, 2, 2, 4))), Tensor(np.zeros((1, 1, 2, 3, 4))))

    def test_gradients_all_modes(self):
        skip = Tensor(rng.standard_normal((1, 1, 2, 2, 4)))
        for mode in ("add", "concat", "both"):
            sm = SkipMerge(4, mode, rng=np.random.default_rng(4), dtype=np.float64)
            err = finite_diff_check(lambda t: sm(t, skip), Tensor(rng.standard_normal((1, 1, 2, 2, 4))))
            assert err < 1e-5, mode


class TestPredictionHead:
    def test_zero_head_zero_output(self):
        head = PredictionHead(TINY, 8, init="zeros", dtype=np.float64)
        out = head(Tensor(rng.standard_normal((2, 12, 4, 4, 8))), (16, 16))
        assert out.shape == (2, 6, 8, 16, 16)
        assert np.all(out.data == 0)

    def test_crop_to_requested_extent(self):
        head = PredictionHead(TINY, 8, rng=np.random.default_rng(0), dtype=np.float64)
        out = head(Tensor(rng.standard_normal((1, 12, 4, 4, 8))), (13, 15))
        assert out.shape == (1, 6, 8, 13, 15)

    def test_gradient(self):
        head = PredictionHead(TINY, 8, rng=np.random.default_rng(1), dtype=np.float64)
        err = finite_diff_check(lambda t: head(t, (8, 8)), Tensor(rng.standard_normal((1, 12, 2, 2, 8))))
        assert err < 1e-5


class TestModelForward:
    @pytest.mark.parametrize("batch", [1, 2])
    @pytest.mark.parametrize("hw", [32, 48, 64])
    def test_shape_contract_dim96(self, hw, batch):
        cfg = ModelConfig(embed_dim=96, encoder_depths=(1, 1, 1, 1), neck_depth=1,
                          decoder_depths=(1, 1, 1, 1))
        model = SwinUNet3D(cfg, seed=0)
        x = Tensor(rng.standard_normal((batch, 12, 8, hw, hw)).astype(np.float32))
        with no_grad():
            out = model(x)
        assert out.shape == (batch, 6, 8, hw, hw)
        assert np.isfinite(out.data).all()

    def test_shape_contract_rectangular(self):
        model = SwinUNet3D(TINY, seed=0)
        x = Tensor(rng.standard_normal((1, 12, 8, 48, 32)).astype(np.float32))
        with no_grad():
            out = model(x)
        assert out.shape == (1, 6, 8, 48, 32)

    def test_zero_head_gives_zero_prediction(self):
        model = SwinUNet3D(TINY, seed=0)
        model.head.expand.weight.data[:] = 0
        model.head.expand.bias.data[:] = 0
        model.head.proj.weight.data[:] = 0
        model.head.proj.bias.data[:] = 0
        x = Tensor(rng.standard_normal((1, 12, 8, 32, 32)).astype(np.float32))
        with no_grad():
            out = model(x)
        assert np.all(out.data == 0)

    def test_too_small_input_rejected(self):
        model = SwinUNet3D(TINY, seed=0)
        with pytest.raises(ConfigError):
            model(Tensor(np.zeros((1, 12, 8, 8, 8), np.float32)))

    def test_wrong_channel_count_rejected(self):
        model = SwinUNet3D(TINY, seed=0)
        with pytest.raises(ConfigError):
            model(Tensor(np.zeros((1, 12, 5, 32, 32), np.float32)))

    def test_temporal_patch_two(self):
        cfg = replace(TINY, patch_size=(2, 4, 4))
        model = SwinUNet3D(cfg, seed=0)
        x = Tensor(rng.standard_normal((1, 12, 8, 32, 32)).astype(np.float32))
        with no_grad():
            out = model(x)
        assert out.shape == (1, 6, 8, 32, 32)

    def test_static_channels_accepted(self):
        cfg = replace(TINY, static_channels=2)
        model = SwinUNet3D(cfg, seed=0)
        x = Tensor(rng.standard_normal((1, 12, 10, 16, 16)).astype(np.float32))
        with no_grad():
            out = model(x)
        assert out.shape == (1, 6, 8, 16, 16)

    def test_encoder_decoder_extent_mirroring(self):
        # encoder stage outputs at (H/4)/2^(s-1); decoder retraces them exactly
        cfg = TINY
        model = SwinUNet3D(cfg, seed=0)
        seen = []
        original_stages = [blocks.__call__ for blocks in model.encoder]

        x = Tensor(rng.standard_normal((1, 12, 8, 64, 64)).astype(np.float32))
        skips = []
        z = model.embed(x)
        expected = [16, 8, 4, 2]
        for stage in range(4):
            if stage > 0:
                z = model.merges[stage - 1](z)
            z = model.encoder[stage](z)
            assert z.shape[2] == expected[stage] and z.shape[3] == expected[stage]
            skips.append(z)
        z = model.neck(z)
        z = model.skips[0](z, skips[3])
        z = model.decoder[0](z)
        assert z.shape[2] == expected[3]
        for i, stage in enumerate((2, 1, 0)):
            z = model.expands[i](z)
            assert z.shape[2] == expected[stage]
            z = model.skips[i + 1](z, skips[stage])
            z = model.decoder[i + 1](z)

    def test_mix_features_identity_matches_base_bitwise(self):
        base = SwinUNet3D(TINY, seed=3)
        mixed = SwinUNet3D(replace(TINY, mix_features=True), seed=3)
        state = {name: p.data.copy() for name, p in base.named_parameters()}
        for name, p in mixed.named_parameters():
            if not name.startswith("mixer"):
                p.data = state[name].copy()
        x = Tensor(rng.standard_normal((1, 12, 8, 32, 32)).astype(np.float32))
        with no_grad():
            assert np.array_equal(base(x).data, mixed(x).data)

    def test_end_to_end_gradients(self):
        model = SwinUNet3D(TINY, seed=0, dtype=np.float64)
        x = Tensor(rng.standard_normal((1, 12, 8, 16, 16)))
        target = Tensor(rng.standard_normal((1, 6, 8, 16, 16)))
        err, worst = check_parameter_gradients(
            lambda: mse_loss(model(x), target), model.parameters(), n_coords=10, seed=1
        )
        assert err < 1e-3, worst


class TestParameterCounts:
    def test_mix_toggle_delta_exact(self):
        on = count_parameters(replace(ModelConfig(), mix_features=True))
        off = count_parameters(ModelConfig())
        assert sum(on.values()) - sum(off.values()) == 96 * 96 + 96  # (t*c)^2 + t*c

    def test_doubling_dim_quadruples_attention_projection_weights(self):
        def attn_weight_total(counts):
            return sum(
                n
                for name, n in counts.items()
                if name.endswith(".weight") and (".attn.qkv" in name or ".attn.proj" in name)
            )

        c96 = count_parameters(ModelConfig(embed_dim=96))
        c192 = count_parameters(ModelConfig(embed_dim=192))
        assert attn_weight_total(c192) == 4 * attn_weight_total(c96)

    def test_subtotals_cover_total(self):
        counts = count_parameters(TINY)
        subs = module_subtotals(counts)
        assert sum(subs.values()) == sum(counts.values())
        assert {"embed", "encoder", "neck", "decoder", "head"} <= set(subs)

    def test_add_merge_mode_drops_skip_parameters(self):
        both = count_parameters(replace(TINY, merge_mode="both"))
        add = count_parameters(replace(TINY, merge_mode="add"))
        assert sum(add.values()) < sum(both.values())
        assert not any("skips" in name for name in add)


class TestModelConfigValidation:
    def test_bad_merge_mode(self):
        with pytest.raises(ConfigError):
            ModelConfig(merge_mode="mean")

    def test_indivisible_heads(self):
        with pytest.raises(ConfigError):
            ModelConfig(embed_dim=96, heads=5)

    def test_temporal_patch_must_divide_frames(self):
        with pytest.raises(ConfigError):
            ModelConfig(patch_size=(5, 4, 4))

    def test_stage_dims_double(self):
        cfg = ModelConfig(embed_dim=96)
        assert [cfg.stage_dim(s) for s in range(4)] == [96, 192, 384, 768]
        assert [cfg.stage_heads(s) for s in range(4)] == [3, 6, 12, 24]

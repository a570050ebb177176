import numpy as np
import pytest

from medgan import verify
from medgan.networks import (CasNet, CasNetSpec, FixedExtractor, FixedExtractorSpec, PatchDiscriminator,
                             PatchDiscSpec, UNet, UNetSpec, casnet_forward, fixed_feature_extract,
                             patch_disc_forward, patch_score, unet_forward, unet_param_count)
from medgan.ops import ShapeError


@pytest.fixture(scope="module")
def unet_params():
    return UNet().init_params(seed=3)


def _image(rng, n=1, size=64):
    return rng.uniform(-1, 1, size=(n, size, size, 1)).astype(np.float32)


class TestInit:
    def test_same_seed_identical(self):
        a, b = UNet().init_params(7), UNet().init_params(7)
        assert list(a) == list(b)
        assert a.digest() == b.digest()
        assert UNet().init_params(8).digest() != a.digest()

    def test_param_count_closed_form(self, unet_params):
        assert unet_param_count(UNetSpec()) == 386_817
        assert unet_params.num_trainable() == 386_817

    @pytest.mark.parametrize("spec", [UNetSpec(depth=2, base_channels=2, channel_cap=8),
                                      UNetSpec(depth=5, base_channels=8, channel_cap=32),
                                      UNetSpec(depth=3, base_channels=4, in_channels=2, out_channels=2)])
    def test_param_count_matches_enumeration(self, spec):
        assert UNet(spec).init_params(0).num_trainable() == unet_param_count(spec)

    def test_biases_zero_bn_identity(self, unet_params):
        for name, v in unet_params.items():
            if name.endswith((".b", ".beta", ".running_mean")):
                assert np.all(v == 0), name
            if name.endswith((".gamma", ".running_var")):
                assert np.all(v == 1), name

    def test_weight_scale(self, unet_params):
        w = np.concatenate([v.ravel() for k, v in unet_params.items() if k.endswith(".w")])
        assert abs(w.std() - 0.02) < 0.001

    def test_no_bn_on_first_encoder_and_output(self, unet_params):
        assert "enc1.bn.gamma" not in unet_params and "dec1.bn.gamma" not in unet_params
        assert "enc2.bn.gamma" in unet_params


class TestUNet:
    def test_shape_preserved(self, rng, unet_params):
        assert unet_forward(_image(rng), unet_params).shape == (1, 64, 64, 1)

    def test_zero_final_layer_gives_zero(self, rng, unet_params):
        p = unet_params.copy()
        p["dec1.w"][:] = 0
        p["dec1.b"][:] = 0
        assert np.all(unet_forward(_image(rng, 2), p, training=True) == 0)

    def test_output_in_tanh_range(self, rng):
        p = UNet().init_params(11)
        for k in p:
            if k.endswith(".w"):
                p[k] = p[k] * 50  # push the output into saturation
        out = unet_forward(_image(rng, 2), p, training=True)
        assert np.max(np.abs(out)) <= 1

    def test_indivisible_input_rejected(self, unet_params):
        with pytest.raises(ShapeError):
            unet_forward(np.zeros((1, 60, 64, 1), np.float32), unet_params)

    def test_training_returns_stats_without_mutating(self, rng, unet_params):
        before = unet_params.digest()
        _, tape = UNet().forward(unet_params, _image(rng, 2), training=True)
        assert unet_params.digest() == before
        assert set(tape.stats) == {k for k in unet_params if k.endswith((".running_mean", ".running_var"))}


class TestCasNet:
    def test_single_stage_equals_unet(self, rng, unet_params):
        x = _image(rng)
        assert np.array_equal(casnet_forward(x, [unet_params]), unet_forward(x, unet_params))

    def test_three_stages_equal_manual_chain(self, rng):
        x = _image(rng)
        params = CasNet().init_params(4)
        out = casnet_forward(x, params, CasNetSpec())
        h = x
        for p in params:
            h = unet_forward(h, p)
        assert out.shape == (1, 64, 64, 1)
        assert np.array_equal(out, h)

    def test_intermediates(self, rng):
        x = _image(rng)
        params = CasNet().init_params(4)
        out, inter, _ = CasNet().forward(params, x, training=False)
        assert len(inter) == 3 and inter[-1] is out
        assert np.array_equal(inter[0], unet_forward(x, params[0]))

    def test_wrong_stage_count(self, rng):
        with pytest.raises(ValueError):
            CasNet().forward(CasNet().init_params(0)[:2], _image(rng))

    def test_channel_chain_mismatch(self):
        with pytest.raises(ValueError):
            CasNetSpec(n_unets=2, unet=UNetSpec(in_channels=1, out_channels=2))

    def test_stages_independently_initialized(self):
        params = CasNet().init_params(4)
        assert params[0].digest() != params[1].digest()


@pytest.fixture(scope="module")
def d_params():
    return PatchDiscriminator().init_params(2)


class TestPatchDiscriminator:
    def test_logit_map_shape(self, rng, d_params):
        logits, feats = patch_disc_forward(_image(rng, 2), _image(rng, 2), d_params)
        assert logits.shape == (2, 8, 8, 1)
        assert feats.dims == [(64, 64, 1), (32, 32, 16), (16, 16, 32), (8, 8, 64)]

    def test_level_zero_is_candidate(self, rng, d_params):
        cand = _image(rng)
        _, feats = patch_disc_forward(cand, _image(rng), d_params)
        assert feats[0] is cand

    def test_score_is_mean_sigmoid(self, rng, d_params):
        logits, _ = patch_disc_forward(_image(rng), _image(rng), d_params)
        manual = sum(1 / (1 + np.exp(-float(v))) for v in logits.ravel()) / 64
        assert float(patch_score(logits)[0]) == pytest.approx(manual, abs=1e-7)

    def test_duplicate_and_permuted_batch_items(self, rng, d_params):
        a, c = _image(rng, 3), _image(rng, 3)
        logits, _ = patch_disc_forward(a, c, d_params)
        assert np.array_equal(logits[0], patch_disc_forward(a[[0, 0]], c[[0, 0]], d_params)[0][1])
        perm = [2, 0, 1]
        assert np.array_equal(patch_disc_forward(a[perm], c[perm], d_params)[0], logits[perm])

    def test_spatial_mismatch_rejected(self, d_params):
        with pytest.raises(ShapeError):
            patch_disc_forward(np.zeros((1, 64, 64, 1)), np.zeros((1, 32, 32, 1)), d_params)


class TestFixedExtractor:
    def test_shapes(self, rng):
        feats = fixed_feature_extract(_image(rng))
        assert [f.shape for f in feats] == [(1, 32, 32, 8), (1, 16, 16, 16), (1, 8, 8, 32)]

    def test_deterministic(self, rng):
        x = _image(rng)
        a, b = fixed_feature_extract(x), fixed_feature_extract(x)
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
        assert FixedExtractor().params["feat1.w"].tobytes() == FixedExtractor().params["feat1.w"].tobytes()

    def test_distinct_inputs_distinct_features(self):
        r1, r2 = np.random.default_rng(1), np.random.default_rng(2)
        a = fixed_feature_extract(_image(r1))[0]
        b = fixed_feature_extract(_image(r2))[0]
        assert np.linalg.norm(a - b) > 0

    def test_float64_twin_matches(self, rng):
        x = _image(rng)
        f32 = fixed_feature_extract(x)
        f64 = fixed_feature_extract(x.astype(np.float64))
        assert f64[2].dtype == np.float64
        assert np.allclose(f32[2], f64[2], atol=1e-4)


def test_composite_gradients():
    assert verify.grad_generator_composite() < verify.COMPOSITE_TOL
    assert verify.grad_discriminator_composite() < verify.COMPOSITE_TOL

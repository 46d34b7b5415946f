import numpy as np
import pytest

from plitex.augment import AugmentationSpec
from plitex.engine import (AdamState, EncoderConfig, RunningStats, TrainConfig,
                           adam_step, embed, embed_patches, info_nce, init_params,
                           load_train_state, save_train_state, standardize, train)
from plitex.engine.autodiff import Tensor
from plitex.engine.nn import forward_model, wrap_params
from plitex.engine.train import batch_to_array, init_train_state
from plitex.errors import SectionSmallerThanTile
from plitex.phantoms import two_texture_benchmark
from plitex.sampling import PairSpec
from plitex.signal import ParameterMaps
from conftest import random_maps


class TestStandardize:
    def test_constant_channel_maps_to_zero(self):
        stats = RunningStats()
        batch = np.zeros((2, 3, 4, 4))
        batch[:, 1] = 5.0
        out = standardize(batch, stats)
        assert np.allclose(out, 0.0)

    def test_first_batch_exact_zscore(self, rng):
        stats = RunningStats()
        batch = rng.normal(2.0, 3.0, size=(4, 3, 8, 8))
        out = standardize(batch, stats)
        for c in range(3):
            assert out[:, c].mean() == pytest.approx(0.0, abs=1e-12)
            assert out[:, c].std() == pytest.approx(1.0, rel=1e-9)

    def test_freeze_after_limit(self, rng):
        stats = RunningStats(freeze_after=4)
        batches = [rng.normal(i, 1.0, size=(2, 3, 4, 4)) for i in range(8)]
        for b in batches:
            standardize(b, stats)
        mean, _ = stats.mean_std()
        expect = np.mean([b.mean(axis=(0, 2, 3)) for b in batches[:4]], axis=0)
        assert np.allclose(mean, expect)
        assert stats.batches_seen == 4

    def test_no_update_when_frozen_flag(self, rng):
        stats = RunningStats()
        standardize(rng.normal(size=(2, 3, 4, 4)), stats, update=False)
        assert stats.batches_seen == 0


class TestForward:
    def test_zero_input_zero_head_gives_bias(self, rng):
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        params = init_params(config, seed=0)
        params["head1.w"][:] = 0.0
        params["head1.b"][:] = np.array([1.0, -2.0, 3.0])
        x = np.zeros((2, 3, 8, 8))
        _, z = forward_model(wrap_params(params), Tensor(x), config)
        assert np.allclose(z.data, [1.0, -2.0, 3.0])

    def test_identical_crops_identical_rows(self, rng):
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        params = init_params(config, seed=0)
        crop = rng.normal(size=(3, 8, 8))
        x = np.stack([crop, crop, crop])
        h, z = forward_model(wrap_params(params), Tensor(x), config)
        assert np.allclose(h.data[0], h.data[1]) and np.allclose(z.data[1], z.data[2])

    def test_finite_activations_on_random_batches(self, rng):
        config = EncoderConfig()
        params = init_params(config, seed=3)
        for seed in range(3):
            x = np.random.default_rng(seed).normal(size=(4, 3, 16, 16))
            h, z = forward_model(wrap_params(params), Tensor(x), config)
            assert np.isfinite(h.data).all() and np.isfinite(z.data).all()


class TestInfoNce:
    def test_pair_order_permutation_invariant(self, rng):
        z = rng.normal(size=(8, 5))
        pairs = [(0, 4), (1, 5), (2, 6), (3, 7)]
        l1, _ = info_nce(z, pairs, 0.5)
        l2, _ = info_nce(z, pairs[::-1], 0.5)
        assert l1.data == pytest.approx(l2.data, abs=1e-12)

    def test_positive_loss_for_nondegenerate(self, rng):
        z = rng.normal(size=(8, 5))
        loss, report = info_nce(z, [(i, 4 + i) for i in range(4)], 0.5)
        assert loss.data > 0
        assert report.pair_losses.shape == (8,)

    def test_zero_vector_handled(self, rng):
        z = rng.normal(size=(4, 3))
        z[1] = 0.0
        loss, _ = info_nce(z, [(0, 2), (1, 3)], 0.5)
        assert np.isfinite(loss.data)


class TestAdam:
    def test_zero_gradient_moves_only_by_weight_decay(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params)
        grads = {"w": np.zeros(2)}
        adam_step(params, grads, state, lr=0.1, weight_decay=1e-2)
        # decay term enters through the gradient: step = -lr * sign(wd * w)
        assert params["w"][0] < 1.0 and params["w"][1] > -2.0

    def test_zero_gradient_zero_decay_no_move(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState.for_params(params)
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.0)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_sign_consistent_unit_update(self, rng):
        g = rng.normal(size=(5,))
        params = {"w": np.zeros(5)}
        state = AdamState.for_params(params)
        adam_step(params, {"w": g.copy()}, state, lr=1e-3, weight_decay=0.0)
        # first bias-corrected step is -lr * g / (|g| + eps) ~ -lr * sign(g)
        assert np.allclose(params["w"], -1e-3 * np.sign(g), atol=1e-8)

    def test_bit_identical_reruns(self, rng):
        g = {"w": rng.normal(size=(4, 4))}
        runs = []
        for _ in range(2):
            params = {"w": np.ones((4, 4))}
            state = AdamState.for_params(params)
            for _ in range(5):
                adam_step(params, g, state)
            runs.append(params["w"].copy())
        assert np.array_equal(runs[0], runs[1])


def tiny_setup(n_sections=3, size=160):
    stack, truth, _ = two_texture_benchmark(seed=5, size=size, n_sections=n_sections,
                                            intensity_noise=0.005,
                                            gamma_jitter_log2=0.05, shift_jitter_px=0.5)
    pair = PairSpec(mode="cl3d", radius_um=30.0, patch_side=48)
    aug = AugmentationSpec(patch_size=48, crop_size=32, blur_prob=0.25,
                           blur_sigma_range=(0.0, 1.0))
    encoder = EncoderConfig(conv_channels=(4, 8), hidden_dim=16, head_hidden=8,
                            head_out=4)
    return stack, truth, pair, aug, encoder


class TestTrain:
    def test_loss_decreases_on_two_class_stack(self):
        from plitex.phantoms import Bundle, Crossing, PhantomSpec, generate

        prims = [Bundle(center=(44, 80), length=120, width=56, angle_deg=90.0,
                        stripe_period=16.0, angle_drift_deg_per_px=0.9),
                 Crossing(center=(116, 80), length=56, width=120, angle_a=0.0,
                          angle_b=45.0, block=8.0, angle_drift_deg_per_px=-0.9)]
        spec = PhantomSpec(height=160, width=160, primitives=prims, n_sections=3,
                           intensity_noise=0.003, gamma_jitter_log2=0.05,
                           shift_jitter_px=0.5, seed=5)
        stack, _ = generate(spec)
        pair = PairSpec(mode="nn", patch_side=48)
        aug = AugmentationSpec(patch_size=48, crop_size=32, rotation_range=(0.0, 0.0),
                               scale_range=(1.0, 1.0), shear_range=(0.0, 0.0),
                               flip_prob=0.5, blur_prob=0.0,
                               thickness_log2_range=(-0.15, 0.15),
                               attenuation_log2_range=(-0.15, 0.15))
        encoder = EncoderConfig(conv_channels=(8, 16), hidden_dim=32, head_hidden=12,
                                head_out=8)
        config = TrainConfig(n_pairs=8, max_steps=200, steps_per_epoch=50,
                             val_batches=1, seed=0, learning_rate=1.5e-3)
        _, history = train(stack, pair, aug, encoder, config)
        losses = np.array(history["train_loss"])
        start = losses[:10].mean()
        end = losses[-10:].mean()
        assert end <= 0.7 * start, f"insufficient progress: {start:.3f} -> {end:.3f}"

    def test_reproducible_loss_curve(self):
        stack, _, pair, aug, encoder = tiny_setup()
        config = TrainConfig(n_pairs=4, max_steps=12, steps_per_epoch=6, val_batches=1,
                             seed=3)
        _, h1 = train(stack, pair, aug, encoder, config)
        _, h2 = train(stack, pair, aug, encoder, config)
        assert h1["train_loss"] == h2["train_loss"]
        assert h1["val_loss"] == h2["val_loss"]

    def test_zero_learning_rate_keeps_parameters(self):
        stack, _, pair, aug, encoder = tiny_setup()
        config = TrainConfig(n_pairs=4, max_steps=5, steps_per_epoch=5, val_batches=1,
                             learning_rate=0.0, seed=1)
        state, _ = train(stack, pair, aug, encoder, config)
        fresh = init_train_state(encoder, seed=1, dtype="float32")
        for name in state.params:
            assert np.array_equal(state.params[name], fresh.params[name]), name


class TestEmbed:
    def test_tiling_arithmetic(self, rng):
        maps = random_maps(rng, shape=(256, 256))
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        state = init_train_state(config, seed=0)
        fmap = embed(maps, state, tile=128, overlap=0.5)
        assert fmap.data.shape == (3, 3, 6)
        assert fmap.stride == 64

    def test_constant_section_constant_features(self):
        maps = ParameterMaps(np.full((96, 96), 0.5), np.full((96, 96), 30.0),
                             np.full((96, 96), 0.4))
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        state = init_train_state(config, seed=0)
        fmap = embed(maps, state, tile=32, overlap=0.5)
        assert np.allclose(fmap.data, fmap.data[0, 0], atol=1e-6)

    def test_paper_geometry_resolution(self, rng):
        maps = random_maps(rng, shape=(256, 256))
        maps.pixel_size = 1.3
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        state = init_train_state(config, seed=0)
        fmap = embed(maps, state, tile=128, overlap=0.5)
        assert fmap.resolution_um == pytest.approx(1.3 * 64)  # 83.2 um per feature px

    def test_too_small_section_raises(self, rng):
        maps = random_maps(rng, shape=(64, 64))
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        state = init_train_state(config, seed=0)
        with pytest.raises(SectionSmallerThanTile):
            embed(maps, state, tile=128)

    def test_deterministic_given_state(self, rng):
        maps = random_maps(rng, shape=(96, 96))
        config = EncoderConfig(conv_channels=(4,), hidden_dim=6, head_hidden=4, head_out=3)
        state = init_train_state(config, seed=0)
        a = embed(maps, state, tile=32)
        b = embed(maps, state, tile=32)
        assert np.array_equal(a.data, b.data)


class TestCheckpoint:
    def test_round_trip_preserves_embed(self, rng, tmp_path):
        stack, _, pair, aug, encoder = tiny_setup(size=160)
        config = TrainConfig(n_pairs=4, max_steps=8, steps_per_epoch=4, val_batches=1,
                             seed=2)
        state, _ = train(stack, pair, aug, encoder, config)
        path = tmp_path / "enc.plck"
        save_train_state(path, state)
        loaded = load_train_state(path)
        assert loaded.config == state.config
        assert loaded.steps == state.steps
        maps = stack.sections[0].maps
        a = embed(maps, loaded, tile=32)
        b = embed(maps, loaded, tile=32)
        assert np.array_equal(a.data, b.data)
        # parameters survive the f32 payload exactly (training ran in f32)
        for name in state.params:
            assert np.array_equal(loaded.params[name], state.params[name])

import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from domain import Action, CheckpointError, FrameRecord, Observation, OdometryDelta, TrainingDivergedError, ValidationError
from latent_model import (
    GaussianLatent,
    LatentModel,
    LatentSample,
    ModelConfig,
    TrainConfig,
    encode_sequence,
    kl_gaussian,
    load_checkpoint,
    make_windows,
    reconstruction_loss,
    resume_optimizer_state,
    save_checkpoint,
    train,
)

TINY = ModelConfig(latent_dim=2, obs_shape=(4, 4, 1), action_dim=1, conv_channels=(2,),
                   hidden_dim=4, activation="elu", dtype="float64")


def random_sequence(rng, length, config=TINY):
    return [
        FrameRecord(t, Observation(rng.random(config.obs_shape)), Action(rng.normal(size=config.action_dim)),
                    OdometryDelta.zero())
        for t in range(length)
    ]


# ---------------------------
# Straight-line numpy reference of the tiny model
# ---------------------------

def elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def linear(p, name, x):
    return p[f"{name}.weight"] @ x + p[f"{name}.bias"]


def conv2d_s2(x, w, b):
    """kernel 4, stride 2, padding 1; x is (C, H, W), w is (O, C, 4, 4)"""
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros((w.shape[0], h // 2, wd // 2))
    for o in range(w.shape[0]):
        for i in range(h // 2):
            for j in range(wd // 2):
                out[o, i, j] = b[o] + np.sum(w[o] * xp[:, 2 * i:2 * i + 4, 2 * j:2 * j + 4])
    return out


def conv_transpose2d_s2(x, w, b):
    """kernel 4, stride 2, padding 1; x is (C, H, W), w is (C, O, 4, 4)"""
    c_in, h, wd = x.shape
    full = np.zeros((w.shape[1], 2 * h + 2, 2 * wd + 2))
    for c in range(c_in):
        for i in range(h):
            for j in range(wd):
                full[:, 2 * i:2 * i + 4, 2 * j:2 * j + 4] += x[c, i, j] * w[c]
    return full[:, 1:-1, 1:-1] + b[:, None, None]


def ref_features(p, pixels):
    return elu(conv2d_s2(pixels.transpose(2, 0, 1), p["encoder.0.weight"], p["encoder.0.bias"])).ravel()


def ref_head(p, net, mean, std, x, min_std):
    hidden = elu(linear(p, f"{net}.2", elu(linear(p, f"{net}.0", x))))
    return linear(p, mean, hidden), softplus(linear(p, std, hidden)) + min_std


def ref_posterior(p, pixels, prev, action, cfg=TINY):
    x = np.concatenate([ref_features(p, pixels), prev, action])
    return ref_head(p, "posterior_net", "posterior_mean", "posterior_std", x, cfg.min_stddev)


def ref_prior(p, prev, action, cfg=TINY):
    return ref_head(p, "prior_net", "prior_mean", "prior_std", np.concatenate([prev, action]), cfg.min_stddev)


def ref_decode(p, state, cfg=TINY):
    h, w = cfg.feature_hw
    hidden = elu(linear(p, "decoder_fc", state)).reshape(cfg.conv_channels[-1], h, w)
    return sigmoid(conv_transpose2d_s2(hidden, p["decoder.0.weight"], p["decoder.0.bias"])).transpose(1, 2, 0)


def ref_free_energy(p, batch, seed, kl_weight=1.0, cfg=TINY):
    max_len = max(len(seq) for seq in batch)
    generator = torch.Generator().manual_seed(seed)
    noise = torch.randn((max_len, cfg.latent_dim), generator=generator, dtype=torch.float64).numpy()
    total = 0.0
    for seq in batch:
        state = np.zeros(cfg.latent_dim)
        for t, frame in enumerate(seq):
            mq, sq = ref_posterior(p, frame.observation.pixels, state, frame.action.controls, cfg)
            mp, sp = ref_prior(p, state, frame.action.controls, cfg)
            kl = np.sum(np.log(sp / sq) + (sq ** 2 + (mq - mp) ** 2) / (2 * sp ** 2) - 0.5)
            state = mq + sq * noise[t]
            recon = ref_decode(p, state, cfg)
            total += kl_weight * kl + 0.5 * np.sum((frame.observation.pixels - recon) ** 2)
    return total / len(batch)


def unit_std_bias(min_std):
    """Bias whose softplus plus min_std is exactly one standard deviation."""
    return math.log(math.expm1(1.0 - min_std))


def zeroed_params(model):
    return {name: np.zeros_like(v) for name, v in model.get_params().items()}


# ---------------------------
# Closed-form pieces
# ---------------------------

class TestKL:
    def test_examples(self):
        assert kl_gaussian(GaussianLatent([0.3], [0.7]), GaussianLatent([0.3], [0.7])) == 0.0
        assert kl_gaussian(GaussianLatent([1.0], [1.0]), GaussianLatent([0.0], [1.0])) == pytest.approx(0.5)
        expected = 0.5 * (4 - 1 - math.log(4))
        assert kl_gaussian(GaussianLatent([0.0], [2.0]), GaussianLatent([0.0], [1.0])) == pytest.approx(expected)

    def test_non_negative(self, rng):
        for _ in range(2000):
            q = GaussianLatent(rng.normal(size=4), rng.uniform(0.01, 3, size=4))
            p = GaussianLatent(rng.normal(size=4), rng.uniform(0.01, 3, size=4))
            assert kl_gaussian(q, p) >= -1e-12

    def test_equals_unclipped_sum(self, rng):
        q = GaussianLatent(rng.normal(size=32), rng.uniform(0.01, 3, size=32))
        p = GaussianLatent(rng.normal(size=32), rng.uniform(0.01, 3, size=32))
        expected = torch.distributions.kl_divergence(
            torch.distributions.Normal(torch.as_tensor(q.mean), torch.as_tensor(q.stddev)),
            torch.distributions.Normal(torch.as_tensor(p.mean), torch.as_tensor(p.stddev)),
        ).sum().item()
        assert kl_gaussian(q, p) == pytest.approx(expected, rel=1e-12)

    def test_rounding_below_zero_is_clipped(self):
        mean, std = np.full(32, 0.1), np.full(32, 0.3)
        assert kl_gaussian(GaussianLatent(mean, std), GaussianLatent(mean.copy(), std.copy())) == 0.0

    @pytest.mark.slow
    def test_non_negative_sweep(self):
        rng = np.random.default_rng(7)
        means = rng.normal(scale=2.0, size=(100_000, 2, 8))
        stds = np.exp(rng.uniform(-4.0, 2.0, size=(100_000, 2, 8)))
        for (qm, pm), (qs, ps) in zip(means, stds):
            assert kl_gaussian(GaussianLatent(qm, qs), GaussianLatent(pm, ps)) >= 0.0

    def test_invalid(self):
        with pytest.raises(ValidationError):
            GaussianLatent([0.0], [0.0])
        with pytest.raises(ValidationError):
            kl_gaussian(GaussianLatent([0.0], [1.0]), GaussianLatent([0.0, 0.0], [1.0, 1.0]))


class TestReconstructionLoss:
    def test_examples(self):
        a = Observation(np.full((1, 1, 1), 1.0))
        b = Observation(np.zeros((1, 1, 1)))
        assert reconstruction_loss(a, a) == 0.0
        assert reconstruction_loss(a, b) == pytest.approx(0.5)

    def test_brute_force(self, rng):
        x, y = rng.random((3, 4, 2)), rng.random((3, 4, 2))
        expected = 0.5 * sum((a - b) ** 2 for a, b in zip(x.ravel(), y.ravel()))
        assert reconstruction_loss(Observation(x), Observation(y)) == pytest.approx(expected)


# ---------------------------
# Networks
# ---------------------------

class TestConfig:
    def test_tiny_model_size(self):
        model = LatentModel.initialize(TINY)
        assert model.param_count == 235

    @pytest.mark.parametrize("kwargs", [
        {"obs_shape": (5, 5, 1)},
        {"latent_dim": 0},
        {"activation": "tanh"},
        {"dtype": "float16"},
        {"min_stddev": 0.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            replace(TINY, **kwargs)

    def test_seeded_init(self):
        a = LatentModel.initialize(TINY, seed=4).get_params()
        b = LatentModel.initialize(TINY, seed=4).get_params()
        c = LatentModel.initialize(TINY, seed=5).get_params()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert any(not np.array_equal(a[k], c[k]) for k in a)


class TestForward:
    def test_zero_weights_give_standard_prior(self):
        model = LatentModel.initialize(TINY)
        params = zeroed_params(model)
        params["prior_std.bias"][:] = unit_std_bias(TINY.min_stddev)
        model.set_params(params)
        prior = model.prior_predict(LatentSample.zero(2), Action.zero(1))
        np.testing.assert_array_equal(prior.mean, 0.0)
        np.testing.assert_allclose(prior.stddev, 1.0, atol=1e-12)

    def test_zero_decoder_is_grey(self):
        model = LatentModel.initialize(TINY)
        model.set_params(zeroed_params(model))
        image = model.likelihood_reconstruct(LatentSample([0.3, -2.0]))
        assert image.shape == TINY.obs_shape
        np.testing.assert_array_equal(image.pixels, 0.5)

    def test_matches_reference(self, rng):
        model = LatentModel.initialize(TINY, seed=11)
        p = model.get_params()
        for _ in range(5):
            prev = rng.normal(size=2)
            action = rng.normal(size=1)
            pixels = rng.random(TINY.obs_shape)
            prior = model.prior_predict(LatentSample(prev), Action(action))
            mean, std = ref_prior(p, prev, action)
            np.testing.assert_allclose(prior.mean, mean, atol=1e-12)
            np.testing.assert_allclose(prior.stddev, std, atol=1e-12)
            post = model.posterior_infer(LatentSample(prev), Action(action), Observation(pixels))
            mean, std = ref_posterior(p, pixels, prev, action)
            np.testing.assert_allclose(post.mean, mean, atol=1e-12)
            np.testing.assert_allclose(post.stddev, std, atol=1e-12)
            recon = model.likelihood_reconstruct(LatentSample(prev))
            np.testing.assert_allclose(recon.pixels, ref_decode(p, prev), atol=1e-12)

    def test_encode_is_posterior_mean(self, rng):
        model = LatentModel.initialize(TINY, seed=2)
        prev, action = LatentSample(rng.normal(size=2)), Action(rng.normal(size=1))
        obs = Observation(rng.random(TINY.obs_shape))
        first = model.encode(prev, action, obs)
        assert first == model.encode(prev, action, obs)
        np.testing.assert_array_equal(first.values, model.posterior_infer(prev, action, obs).mean)

    def test_posterior_is_continuous(self, rng):
        model = LatentModel.initialize(TINY, seed=2)
        prev, action = LatentSample.zero(2), Action.zero(1)
        pixels = rng.uniform(0.1, 0.9, TINY.obs_shape)
        base = model.posterior_infer(prev, action, Observation(pixels)).mean
        nudged = model.posterior_infer(prev, action, Observation(pixels + 1e-6)).mean
        assert np.all(np.isfinite(nudged))
        assert np.max(np.abs(nudged - base)) < 1e-3

    def test_shape_checks(self):
        model = LatentModel.initialize(TINY)
        with pytest.raises(ValidationError):
            model.prior_predict(LatentSample.zero(3), Action.zero(1))
        with pytest.raises(ValidationError):
            model.posterior_infer(LatentSample.zero(2), Action.zero(2), Observation(np.zeros((4, 4, 1))))
        with pytest.raises(ValidationError):
            model.encode(LatentSample.zero(2), Action.zero(1), Observation(np.zeros((8, 8, 1))))

    def test_encode_sequence(self, rng):
        model = LatentModel.initialize(TINY)
        frames = random_sequence(rng, 5)
        latents = encode_sequence(model, frames)
        assert len(latents) == 5
        assert latents[1] == model.encode(latents[0], frames[1].action, frames[1].observation)


# ---------------------------
# Free energy and gradients
# ---------------------------

class TestFreeEnergy:
    def test_kl_half_plus_recon_two(self):
        model = LatentModel.initialize(TINY)
        params = zeroed_params(model)
        params["posterior_mean.bias"][:] = [1.0, 0.0]
        params["posterior_std.bias"][:] = unit_std_bias(TINY.min_stddev)
        params["prior_std.bias"][:] = unit_std_bias(TINY.min_stddev)
        model.set_params(params)
        checker = np.indices(TINY.obs_shape).sum(axis=0) % 2
        frame = FrameRecord(0, Observation(checker.astype(float)), Action.zero(1), OdometryDelta.zero())
        loss, kl, recon = model.free_energy_terms([[frame]], seed=0)
        assert float(kl) == pytest.approx(0.5, abs=1e-9)
        assert float(recon) == pytest.approx(2.0, abs=1e-12)
        assert model.free_energy([[frame]], seed=0) == pytest.approx(2.5, abs=1e-9)

    def test_matches_unrolled_reference(self, rng):
        model = LatentModel.initialize(TINY, seed=3)
        batch = [random_sequence(rng, 3), random_sequence(rng, 3), random_sequence(rng, 2)]
        expected = ref_free_energy(model.get_params(), batch, seed=17)
        assert model.free_energy(batch, seed=17) == pytest.approx(expected, abs=1e-10)

    def test_kl_weight(self, rng):
        model = LatentModel.initialize(TINY, seed=3)
        batch = [random_sequence(rng, 3)]
        expected = ref_free_energy(model.get_params(), batch, seed=2, kl_weight=0.25)
        assert model.free_energy(batch, seed=2, kl_weight=0.25) == pytest.approx(expected, abs=1e-10)

    def test_deterministic_for_seed(self, rng):
        model = LatentModel.initialize(TINY, seed=3)
        batch = [random_sequence(rng, 3)]
        assert model.free_energy(batch, 5) == model.free_energy(batch, 5)
        assert model.free_energy(batch, 5) != model.free_energy(batch, 6)

    def test_empty_batch(self):
        with pytest.raises(ValidationError):
            LatentModel.initialize(TINY).free_energy([], 0)


def finite_difference(model, batch, seed, h=1e-4):
    params = model.get_params()
    grads = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(*value.shape):
            original = value[idx]
            value[idx] = original + h
            model.set_params({name: value})
            up = model.free_energy(batch, seed)
            value[idx] = original - h
            model.set_params({name: value})
            down = model.free_energy(batch, seed)
            value[idx] = original
            model.set_params({name: value})
            grad[idx] = (up - down) / (2 * h)
        grads[name] = grad
    return grads


class TestGradient:
    def check(self, seed):
        rng = np.random.default_rng(seed)
        model = LatentModel.initialize(TINY, seed=seed)
        batch = [random_sequence(rng, 3), random_sequence(rng, 3)]
        analytic = model.grad_free_energy(batch, seed=seed)
        numeric = finite_difference(model, batch, seed)
        assert set(analytic) == set(numeric)
        for name in analytic:
            np.testing.assert_allclose(analytic[name], numeric[name], rtol=1e-3, atol=1e-7, err_msg=name)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_finite_differences(self, seed):
        self.check(seed)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(2, 10))
    def test_matches_finite_differences_more_seeds(self, seed):
        self.check(seed)

    def test_unused_prior_gets_exact_zero(self, rng):
        model = LatentModel.initialize(TINY, seed=1)
        grads = model.grad_free_energy([random_sequence(rng, 3)], seed=0, kl_weight=0.0)
        for name, grad in grads.items():
            if name.startswith("prior_"):
                assert np.all(grad == 0.0), name
        assert np.any(grads["posterior_mean.weight"] != 0.0)

    def test_duplicated_batch_same_mean_gradient(self, rng):
        model = LatentModel.initialize(TINY, seed=1)
        batch = [random_sequence(rng, 3), random_sequence(rng, 3)]
        single = model.grad_free_energy(batch, seed=3)
        double = model.grad_free_energy(batch + batch, seed=3)
        for name in single:
            np.testing.assert_allclose(double[name], single[name], rtol=1e-12, atol=1e-14)


# ---------------------------
# Training and checkpoints
# ---------------------------

def test_make_windows(rng):
    long_seq, short_seq = random_sequence(rng, 10), random_sequence(rng, 2)
    windows = make_windows([long_seq, short_seq, []], 4)
    assert [len(w) for w in windows] == [4, 4, 2]
    assert windows[1][0].t == 4


class TestTrain:
    config = TrainConfig(epochs=3, learning_rate=1e-2, batch_size=2, sequence_length=3, seed=5)

    def sequences(self):
        rng = np.random.default_rng(0)
        return [random_sequence(rng, 6) for _ in range(3)]

    def test_zero_epochs_keeps_init(self):
        model = LatentModel.initialize(TINY, seed=1)
        before = model.get_params()
        result = train(model, self.sequences(), replace(self.config, epochs=0))
        assert result.history.empty and result.final_loss is None
        after = model.get_params()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_deterministic(self):
        a = train(LatentModel.initialize(TINY, seed=1), self.sequences(), self.config).history
        b = train(LatentModel.initialize(TINY, seed=1), self.sequences(), self.config).history
        assert a.equals(b)
        assert list(a["epoch"]) == [1, 2, 3]

    def test_divergence_reports_epoch(self):
        model = LatentModel.initialize(TINY, seed=1)
        bad = model.get_params()["decoder_fc.bias"]
        bad[:] = np.nan
        model.set_params({"decoder_fc.bias": bad})
        with pytest.raises(TrainingDivergedError) as info:
            train(model, self.sequences(), self.config)
        assert info.value.epoch == 1

    def test_resume_matches_uninterrupted(self, tmp_path):
        config = replace(self.config, epochs=4)
        full_model = LatentModel.initialize(TINY, seed=1)
        full = train(full_model, self.sequences(), config)

        half_model = LatentModel.initialize(TINY, seed=1)
        half = train(half_model, self.sequences(), replace(config, epochs=2))
        path = tmp_path / "half.npz"
        save_checkpoint(str(path), half_model, config, half.epoch, half.final_loss, half.optimizer)

        checkpoint = load_checkpoint(str(path), expected=TINY)
        assert checkpoint.epoch == 2
        rest = train(checkpoint.model, self.sequences(), config, start_epoch=checkpoint.epoch,
                     optimizer_state=resume_optimizer_state(checkpoint, config.learning_rate))
        np.testing.assert_allclose(rest.history.to_numpy(), full.history.iloc[2:].to_numpy(), rtol=1e-12)
        resumed, uninterrupted = checkpoint.model.get_params(), full_model.get_params()
        for name in resumed:
            np.testing.assert_allclose(resumed[name], uninterrupted[name], rtol=1e-12, atol=1e-15)

    @pytest.mark.slow
    def test_toy_loss_decreases(self):
        config = ModelConfig(latent_dim=4, obs_shape=(16, 16, 1), action_dim=1, conv_channels=(8, 16),
                             hidden_dim=32)
        rng = np.random.default_rng(0)
        ramp = np.linspace(0.0, 1.0, 16)
        sequences = []
        for _ in range(16):
            phase = rng.integers(16)
            sequences.append([
                FrameRecord(t, Observation(np.roll(np.tile(ramp, (16, 1)), phase + t, axis=1)[..., None]),
                            Action([1.0]), OdometryDelta.zero())
                for t in range(8)
            ])
        result = train(LatentModel.initialize(config, seed=0), sequences,
                       TrainConfig(epochs=50, learning_rate=1e-3, batch_size=4, sequence_length=8))
        losses = result.history["free_energy"].to_numpy()
        assert losses[-1] < losses[0]


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = LatentModel.initialize(TINY, seed=9)
        path = tmp_path / "model.npz"
        save_checkpoint(str(path), model, TrainConfig(epochs=7), epoch=7, final_loss=1.25)
        checkpoint = load_checkpoint(str(path))
        assert checkpoint.model.config == TINY
        assert checkpoint.epoch == 7 and checkpoint.final_loss == 1.25
        assert checkpoint.train_config == TrainConfig(epochs=7)
        assert checkpoint.optimizer_state is None
        a, b = model.get_params(), checkpoint.model.get_params()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_shape_mismatch(self, tmp_path):
        path = tmp_path / "model.npz"
        save_checkpoint(str(path), LatentModel.initialize(TINY))
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path), expected=replace(TINY, obs_shape=(8, 8, 1)))

    def test_corrupt_and_missing(self, tmp_path):
        path = tmp_path / "model.npz"
        path.write_bytes(b"not a zip file")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))
        with pytest.raises(CheckpointError):
            load_checkpoint(str(tmp_path / "missing.npz"))

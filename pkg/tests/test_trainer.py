import numpy as np
import pytest

from mulde import (AdamState, EnergyNet, NumericError, Rng, TrainConfig,
                   UsageError, adam_step, perturb, sample_log_uniform, train)


class TestSampleLogUniform:
    def test_degenerate_interval(self):
        rng = Rng(0)
        assert sample_log_uniform(rng, 0.5, 0.5) == 0.5

    def test_median_is_geometric_mean(self):
        rng = Rng(1)
        draws = sample_log_uniform(rng, 1e-3, 1.0, size=100_000)
        assert np.median(draws) == pytest.approx(np.sqrt(1e-3), rel=0.03)

    def test_log_is_uniform_by_ks_statistic(self):
        rng = Rng(2)
        draws = sample_log_uniform(rng, 1e-3, 1.0, size=100_000)
        u = (np.log(draws) - np.log(1e-3)) / (np.log(1.0) - np.log(1e-3))
        u.sort()
        n = len(u)
        grid = np.arange(1, n + 1) / n
        ks = max(np.max(np.abs(grid - u)), np.max(np.abs(u - (grid - 1.0 / n))))
        assert ks < 0.01

    def test_always_inside_closed_interval(self):
        rng = Rng(3)
        draws = sample_log_uniform(rng, 1e-3, 1.0, size=10_000)
        assert np.all(draws >= 1e-3) and np.all(draws <= 1.0)

    def test_rejects_bad_interval(self):
        rng = Rng(4)
        with pytest.raises(UsageError):
            sample_log_uniform(rng, 0.0, 1.0)
        with pytest.raises(UsageError):
            sample_log_uniform(rng, 2.0, 1.0)


class TestPerturb:
    def test_mean_and_std_by_monte_carlo(self):
        rng = Rng(5)
        x = np.array([1.0, -2.0, 0.5])
        sigma = 0.7
        n = 100_000
        draws = perturb(np.tile(x, (n, 1)), np.full(n, sigma), rng) - x
        assert np.all(np.abs(draws.mean(axis=0)) < 3 * sigma / np.sqrt(n))
        assert np.allclose(draws.std(axis=0), sigma, rtol=0.01)

    def test_same_seed_identical(self):
        x = np.arange(6, dtype=float).reshape(2, 3)
        a = perturb(x, np.array([0.1, 0.5]), Rng(7))
        b = perturb(x, np.array([0.1, 0.5]), Rng(7))
        assert np.array_equal(a, b)

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(UsageError):
            perturb(np.zeros(3), 0.0, Rng(0))


class TestAdamStep:
    def config(self):
        return TrainConfig(learning_rate=0.01, hidden_widths=(4,), batch_size=4)

    def test_zero_gradients_leave_params_unchanged(self):
        params = [np.ones((2, 2)), np.zeros(2)]
        grads = [np.zeros((2, 2)), np.zeros(2)]
        state = AdamState.for_params(params)
        new_params, new_state = adam_step(params, grads, state, self.config())
        assert all(np.array_equal(p, q) for p, q in zip(params, new_params))
        assert new_state.step_count == 1

    def test_first_step_is_signed_learning_rate(self):
        # bias correction makes the first update -lr*g/(|g| + eps)
        g = np.array([0.3, -2.0, 0.0])
        params = [np.zeros(3)]
        state = AdamState.for_params(params)
        cfg = self.config()
        new_params, _ = adam_step(params, [g], state, cfg)
        expected = -cfg.learning_rate * g / (np.abs(g) + cfg.adam_epsilon)
        assert np.allclose(new_params[0], expected, atol=1e-12)

    def test_deterministic(self):
        rng = Rng(8)
        params = [rng.normal((3, 3))]
        grads = [rng.normal((3, 3))]
        state = AdamState.for_params(params)
        a, _ = adam_step(params, grads, state, self.config())
        b, _ = adam_step(params, grads, state, self.config())
        assert np.array_equal(a[0], b[0])

    def test_shape_mismatch_rejected(self):
        params = [np.zeros(3)]
        state = AdamState.for_params(params)
        with pytest.raises(UsageError):
            adam_step(params, [np.zeros(4)], state, self.config())

    def test_moments_decay_toward_zero_on_zero_gradients(self):
        params = [np.zeros(2)]
        grads = [np.zeros(2)]
        state = AdamState([np.ones(2)], [np.ones(2)], 0)
        _, state = adam_step(params, grads, state, self.config())
        assert np.all(state.first_moments[0] < 1.0)
        assert np.all(state.second_moments[0] < 1.0)


class TestTrainConfig:
    def test_json_round_trip_uses_exact_keys(self):
        cfg = TrainConfig(hidden_widths=(32, 16), n_scales=8, seed=3)
        doc = cfg.to_json_dict()
        assert sorted(doc) == sorted(["learning_rate", "adam_beta1", "adam_beta2",
                                      "adam_epsilon", "batch_size", "beta_reg",
                                      "sigma_low", "sigma_high", "L", "max_epochs",
                                      "hidden_widths", "seed"])
        assert doc["L"] == 8
        back = TrainConfig.from_json_dict(doc)
        assert back == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(Exception):
            TrainConfig.from_json_dict({"learning_rate": 0.1, "bogus": 1})

    def test_invariants(self):
        with pytest.raises(UsageError):
            TrainConfig(adam_beta1=1.0)
        with pytest.raises(UsageError):
            TrainConfig(sigma_low=0.5, sigma_high=0.1)
        with pytest.raises(UsageError):
            TrainConfig(batch_size=0)

    def test_presets(self):
        assert TrainConfig.object_centric().learning_rate == 5e-4
        assert TrainConfig.frame_centric().learning_rate == 1e-4


def tiny_training_setup(n=256, seed=0):
    rng = Rng(seed)
    X = rng.normal((n, 2))
    config = TrainConfig(hidden_widths=(16, 16), batch_size=64, max_epochs=8,
                         beta_reg=0.0, seed=seed)
    net0 = EnergyNet.initialize(2, config.hidden_widths, config.sigma_low,
                                config.sigma_high, seed=seed)
    return X, net0, config


class TestTrain:
    def test_loss_decreases_on_gaussian_data(self):
        X, net0, _ = tiny_training_setup(n=512)
        config = TrainConfig(hidden_widths=(16, 16), batch_size=128, max_epochs=200,
                             beta_reg=0.0, seed=0)
        _, history = train(X, net0, config)
        assert len(history) == config.max_epochs
        assert all(np.isfinite(h) for h in history)
        assert history[-1] < history[0]

    def test_bitwise_reproducible(self):
        X, net0, config = tiny_training_setup()
        net_a, hist_a = train(X, net0, config)
        net_b, hist_b = train(X, net0, config)
        assert hist_a == hist_b
        for a, b in zip(net_a.parameters(), net_b.parameters()):
            assert np.array_equal(a, b)

    def test_short_final_batch_kept(self):
        # 100 rows with batch 64 -> batches of 64 and 36
        X, net0, config = tiny_training_setup(n=100)
        _, history = train(X, net0, config)
        assert len(history) == config.max_epochs

    def test_empty_features_rejected(self):
        _, net0, config = tiny_training_setup()
        with pytest.raises(UsageError):
            train(np.empty((0, 2)), net0, config)

    def test_dimension_mismatch_rejected(self):
        X, net0, config = tiny_training_setup()
        with pytest.raises(UsageError):
            train(np.zeros((10, 5)), net0, config)

    def test_divergence_aborts_with_checkpoint(self):
        X, net0, config = tiny_training_setup()
        config = TrainConfig(hidden_widths=(16, 16), batch_size=64, max_epochs=8,
                             beta_reg=0.0, seed=0, learning_rate=1e280)
        bad = net0.with_parameters([p * 1e150 for p in net0.parameters()])
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(NumericError) as err:
                train(X, bad, config)
        assert err.value.last_net is not None

    def test_epoch_callback_sees_running_net(self):
        X, net0, config = tiny_training_setup()
        seen = []
        train(X, net0, config, on_epoch_end=lambda e, net, loss: seen.append((e, loss)))
        assert [e for e, _ in seen] == list(range(1, config.max_epochs + 1))

    def test_early_stop_halts_on_plateau(self):
        X, net0, _ = tiny_training_setup()
        config = TrainConfig(hidden_widths=(16, 16), batch_size=64, max_epochs=200,
                             beta_reg=0.0, seed=0, learning_rate=1e-12)
        _, history = train(X, net0, config, early_stop=True)
        assert len(history) < 200

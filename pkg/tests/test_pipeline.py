import numpy as np
import pytest

from mulde import (EnergyNet, NoiseSchedule, Rng, ScoreSeries,
                   Standardizer, UsageError, build_multiscale_vectors, fit_em,
                   fit_standardizer, fuse_feature_types, gaussian_kernel,
                   gradient_norm_score, gradient_norm_vectors, multiscale_stats,
                   pool_multiscale, pool_objects_to_frames, score_rows, smooth_series,
                   training_score_stats)


class TestStandardizer:
    def test_two_point_example(self):
        s = fit_standardizer(np.array([[0.0], [2.0]]))
        assert s.mean[0] == 1.0
        assert s.std[0] == 1.0  # population std

    def test_constant_column_floored_at_epsilon(self):
        s = Standardizer(epsilon=1e-8).fit(np.full((5, 2), 3.0))
        assert np.all(s.std == 1e-8)
        assert np.all(s.transform(np.full((1, 2), 3.0)) == 0.0)

    def test_self_transform_is_zero_mean_unit_std(self):
        rng = Rng(0)
        X = rng.normal((500, 4)) * np.array([0.5, 2.0, 7.0, 1.0]) + 3.0
        s = fit_standardizer(X)
        Z = s.transform(X)
        assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(Z.std(axis=0) - 1.0) < 1e-9)

    def test_affine_examples(self):
        s = fit_standardizer(np.array([[1.0, 5.0], [3.0, 9.0]]))
        assert np.allclose(s.transform(s.mean[None, :]), 0.0)
        assert np.allclose(s.transform((s.mean + s.std)[None, :]), 1.0)

    def test_empty_fit_rejected(self):
        with pytest.raises(UsageError):
            fit_standardizer(np.empty((0, 2)))

    def test_unfitted_transform_rejected(self):
        with pytest.raises(UsageError):
            Standardizer().transform(np.zeros((1, 2)))


class TestScoreRows:
    def make_models(self):
        rng = Rng(1)
        net = EnergyNet.initialize(3, [8, 6], seed=2)
        schedule = NoiseSchedule.for_net(net, 5)
        train = rng.normal((50, 3))
        s = fit_standardizer(train)
        V = build_multiscale_vectors(net, s.transform(train), schedule)
        gmm, _ = fit_em(V, 2, seed=0)
        return net, gmm, schedule, s

    def test_composition_matches_manual(self):
        net, gmm, schedule, s = self.make_models()
        x = np.array([[0.3, -0.2, 1.0]])
        scores = score_rows(net, gmm, schedule, s, x)
        v = build_multiscale_vectors(net, s.transform(x), schedule)
        assert scores[0] == gmm.nll(v[0])

    def test_empty_input(self):
        net, gmm, schedule, s = self.make_models()
        assert score_rows(net, gmm, schedule, s, np.empty((0, 3))).shape == (0,)

    def test_permutation_equivariance(self):
        net, gmm, schedule, s = self.make_models()
        X = Rng(3).normal((10, 3))
        perm = Rng(4).permutation(10)
        assert np.array_equal(score_rows(net, gmm, schedule, s, X)[perm],
                              score_rows(net, gmm, schedule, s, X[perm]))


class TestPoolObjectsToFrames:
    def test_max_pooling_within_frame(self):
        series = pool_objects_to_frames(
            [0.2, 0.7], [("v", 0), ("v", 0)], {"v": 1})
        assert series["v"].scores.tolist() == [0.7]

    def test_singleton_frame_passthrough(self):
        series = pool_objects_to_frames([0.42], [("v", 0)], {"v": 1})
        assert series["v"].scores.tolist() == [0.42]

    def test_empty_frame_gets_video_minimum(self):
        series = pool_objects_to_frames(
            [0.5, 0.1, 0.9], [("v", 0), ("v", 0), ("v", 2)], {"v": 3})
        assert series["v"].scores.tolist() == [0.5, 0.1, 0.9]

    def test_pooled_score_bounds_members(self):
        rng = Rng(5)
        scores = rng.uniform(30)
        rows = [("v", int(i)) for i in rng.integers(0, 10, size=30)]
        series = pool_objects_to_frames(scores, rows, {"v": 10})["v"]
        for s, (_, f) in zip(scores, rows):
            assert series.scores[f] >= s

    def test_out_of_range_frame_rejected(self):
        with pytest.raises(UsageError):
            pool_objects_to_frames([0.5], [("v", 3)], {"v": 2})

    def test_video_without_rows_rejected(self):
        with pytest.raises(UsageError):
            pool_objects_to_frames([0.5], [("v", 0)], {"v": 1, "w": 4})


class TestFuseFeatureTypes:
    def test_clipping_rule(self):
        # z-scores (-0.5, 1.2) -> clip -> sum = 1.2
        scores = {"a": np.array([-0.5]), "b": np.array([1.2])}
        stats = {"a": (0.0, 1.0), "b": (0.0, 1.0)}
        assert fuse_feature_types(scores, stats)[0] == pytest.approx(1.2)

    def test_all_types_at_training_mean_fuse_to_zero(self):
        scores = {"a": np.full(4, 2.0), "b": np.full(4, -1.0)}
        stats = {"a": (2.0, 0.5), "b": (-1.0, 3.0)}
        assert np.all(fuse_feature_types(scores, stats) == 0.0)

    def test_single_type_is_clipped_zscore(self):
        scores = {"a": np.array([1.0, 5.0])}
        stats = {"a": (2.0, 2.0)}
        assert fuse_feature_types(scores, stats).tolist() == [0.0, 1.5]

    def test_monotone_in_each_type(self):
        stats = {"a": (0.0, 1.0), "b": (0.0, 1.0)}
        base = fuse_feature_types({"a": np.array([0.5]), "b": np.array([0.3])}, stats)[0]
        raised = fuse_feature_types({"a": np.array([0.9]), "b": np.array([0.3])}, stats)[0]
        assert raised >= base

    def test_coverage_mismatch_rejected(self):
        with pytest.raises(UsageError):
            fuse_feature_types({"a": np.zeros(3), "b": np.zeros(4)},
                               {"a": (0, 1), "b": (0, 1)})

    def test_training_score_stats_population(self):
        mean, std = training_score_stats([0.0, 2.0])
        assert (mean, std) == (1.0, 1.0)


class TestSmoothing:
    def test_kernel_sums_to_one(self):
        for std in (0.3, 1.0, 2.5, 5.0):
            k = gaussian_kernel(std)
            assert k.sum() == pytest.approx(1.0, abs=1e-12)
            assert len(k) == 2 * int(np.ceil(3 * std)) + 1

    def test_zero_std_is_identity(self):
        series = ScoreSeries("v", [1.0, 3.0, 2.0])
        out = smooth_series(series, 0.0)
        assert out.scores.tolist() == [1.0, 3.0, 2.0]
        assert out.smoothed

    def test_constant_series_unchanged(self):
        series = ScoreSeries("v", np.full(40, 2.5))
        out = smooth_series(series, 4.0)
        assert np.allclose(out.scores, 2.5, atol=1e-12)

    def test_impulse_reproduces_kernel(self):
        std = 2.0
        kernel = gaussian_kernel(std)
        n = 101
        series = ScoreSeries("v", np.eye(n)[n // 2])
        out = smooth_series(series, std)
        radius = len(kernel) // 2
        window = out.scores[n // 2 - radius:n // 2 + radius + 1]
        assert np.allclose(window, kernel, atol=1e-12)

    def test_preserves_global_bounds(self):
        rng = Rng(6)
        series = ScoreSeries("v", rng.uniform(60))
        out = smooth_series(series, 3.0)
        assert out.scores.min() >= series.scores.min() - 1e-12
        assert out.scores.max() <= series.scores.max() + 1e-12

    def test_short_series_with_wide_kernel(self):
        series = ScoreSeries("v", [1.0, 2.0, 3.0])
        out = smooth_series(series, 5.0)
        assert out.scores.shape == (3,)
        assert np.isfinite(out.scores).all()


class TestPoolMultiscale:
    def test_single_scale_is_zscore_for_all_modes(self):
        V = np.array([[3.0], [5.0]])
        stats = (np.array([4.0]), np.array([2.0]))
        for mode in ("max", "avg", "median"):
            assert pool_multiscale(V, stats, mode).tolist() == [-0.5, 0.5]

    def test_identical_columns_agree_across_modes(self):
        V = np.tile(np.array([[1.0], [2.0], [5.0]]), (1, 4))
        stats = (np.full(4, 2.0), np.full(4, 1.5))
        outs = [pool_multiscale(V, stats, m) for m in ("max", "avg", "median")]
        assert np.allclose(outs[0], outs[1]) and np.allclose(outs[1], outs[2])

    def test_zscore_row_example(self):
        V = np.array([[-1.0, 0.0, 2.0]])
        stats = (np.zeros(3), np.ones(3))
        assert pool_multiscale(V, stats, "max")[0] == 2.0
        assert pool_multiscale(V, stats, "avg")[0] == pytest.approx(1 / 3)
        assert pool_multiscale(V, stats, "median")[0] == 0.0

    def test_unknown_mode_rejected(self):
        with pytest.raises(UsageError):
            pool_multiscale(np.zeros((1, 2)), (np.zeros(2), np.ones(2)), "sum")

    def test_multiscale_stats_population(self):
        V = np.array([[0.0, 1.0], [2.0, 3.0]])
        mean, std = multiscale_stats(V)
        assert mean.tolist() == [1.0, 2.0]
        assert std.tolist() == [1.0, 1.0]


class TestGradientNorm:
    def test_zero_weight_net_scores_zero(self):
        net = EnergyNet.initialize(2, [4], seed=0)
        zeroed = EnergyNet([np.zeros_like(w) for w in net.weights],
                           [np.zeros_like(b) for b in net.biases], 1e-3, 1.0)
        s = Standardizer()
        s.mean, s.std = np.zeros(2), np.ones(2)
        V = gradient_norm_vectors(zeroed, NoiseSchedule(1e-3, 1.0, 4), s, np.ones((3, 2)))
        assert np.all(V == 0.0)

    def test_invariant_to_energy_offset(self):
        net = EnergyNet.initialize(2, [6, 4], seed=1)
        shifted = EnergyNet([w.copy() for w in net.weights],
                            [b.copy() for b in net.biases], 1e-3, 1.0)
        shifted.biases[-1][0] += 123.0
        s = Standardizer()
        s.mean, s.std = np.zeros(2), np.ones(2)
        X = Rng(7).normal((5, 2))
        schedule = NoiseSchedule(1e-3, 1.0, 3)
        assert np.allclose(gradient_norm_vectors(net, schedule, s, X),
                           gradient_norm_vectors(shifted, schedule, s, X))

    def test_aggregation_paths(self):
        net = EnergyNet.initialize(2, [6, 4], seed=2)
        s = Standardizer()
        s.mean, s.std = np.zeros(2), np.ones(2)
        schedule = NoiseSchedule(1e-3, 1.0, 4)
        rng = Rng(8)
        train = rng.normal((40, 2))
        V = gradient_norm_vectors(net, schedule, s, train)
        stats = multiscale_stats(V)
        test = rng.normal((6, 2))
        pooled = gradient_norm_score(net, schedule, s, test, stats=stats, mode="max")
        assert pooled.shape == (6,)
        gmm, _ = fit_em(V, 1, seed=0)
        scored = gradient_norm_score(net, schedule, s, test, gmm=gmm)
        assert scored.shape == (6,)
        with pytest.raises(UsageError):
            gradient_norm_score(net, schedule, s, test)

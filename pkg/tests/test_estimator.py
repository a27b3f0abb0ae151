"""Score, dual objective, variance, CI and the cross-fitted estimator."""

import warnings

import numpy as np
import pytest

import shiftrisk as sr
from conftest import lattice_frame


class TestDualObjective:
    def test_two_point_hand_value(self):
        # 0.5*[(0)/0.5 + 0.2] + 0.5*[(0.6)/0.5 + 0.2] = 0.8
        value = sr.dual_objective([0.2, 0.8], [0.2, 0.2], [0.5, 0.5], alpha=0.5)
        assert value == pytest.approx(0.8, abs=1e-12)

    def test_threshold_at_minimum_recovers_mean(self):
        rng = np.random.default_rng(0)
        mu = rng.random(20)
        eta = np.full(20, mu.min())
        value = sr.dual_objective(mu, eta, np.full(20, 1 / 20), alpha=0.0)
        assert value == pytest.approx(mu.mean(), abs=1e-12)

    def test_constant_mu_gives_constant(self):
        for alpha in (0.0, 0.3, 0.9):
            value = sr.dual_objective(np.full(5, 0.7), np.full(5, 0.7), np.full(5, 0.2), alpha=alpha)
            assert value == pytest.approx(0.7, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(sr.DimensionMismatch):
            sr.dual_objective([1.0], [1.0, 2.0], [1.0], 0.5)


class TestScorePsi:
    def test_all_equal_vanishes(self):
        assert sr.score_psi(0.4, 0.4, 0.4, alpha=0.3, r=0.4) == pytest.approx(0.0, abs=1e-15)

    def test_hand_computed_value(self):
        # 2*(0.2 + 1*0.4) + 0.4 - 0 = 1.6
        assert sr.score_psi(1.0, 0.6, 0.4, alpha=0.5, r=0.0) == pytest.approx(1.6, abs=1e-12)

    def test_outside_subsample_ignores_loss(self):
        a = sr.score_psi(123.0, 0.2, 0.5, alpha=0.25, r=0.1)
        b = sr.score_psi(-7.0, 0.2, 0.5, alpha=0.25, r=0.1)
        assert a == b == pytest.approx(0.5 - 0.1, abs=1e-15)


class TestVarianceAndCI:
    def test_zero_scores(self):
        assert sr.estimate_variance(np.zeros(5)) == 0.0

    def test_plus_minus_one(self):
        assert sr.estimate_variance(np.array([1.0, -1.0])) == pytest.approx(1.0)

    def test_scaling_is_quadratic(self):
        psi = np.random.default_rng(0).normal(size=50)
        assert sr.estimate_variance(3.0 * psi) == pytest.approx(9.0 * sr.estimate_variance(psi))

    def test_fold_weighted_form(self):
        psi = np.array([1.0, 1.0, 1.0, 3.0])
        fold = np.array([0, 0, 0, 1])
        # (mean([1,1,1]) + mean([9])) / 2
        assert sr.estimate_variance(psi, fold) == pytest.approx((1.0 + 9.0) / 2)

    def test_ci_degenerate(self):
        assert sr.confidence_interval(1.5, 0.0, 100, 0.95) == (1.5, 1.5)

    def test_ci_critical_value(self):
        lo, hi = sr.confidence_interval(0.0, 1.0, 1, 0.95)
        assert hi == pytest.approx(1.959964, abs=1e-6)
        assert lo == pytest.approx(-1.959964, abs=1e-6)

    def test_ci_nested_in_level(self):
        inner = sr.confidence_interval(2.0, 0.5, 40, 0.95)
        outer = sr.confidence_interval(2.0, 0.5, 40, 0.99)
        assert outer[0] < inner[0] < inner[1] < outer[1]


class TestAlphaZero:
    def test_exact_mean_and_full_subsample(self, lattice):
        frame = lattice_frame(lattice, 400, seed=0)
        est = sr.estimate_worst_case(frame, sr.EstimatorConfig(alpha=0.0, k_folds=5))
        assert est.r_hat == np.mean(frame.losses)
        np.testing.assert_array_equal(est.h_indicators, 1)
        assert est.sigma2_hat == pytest.approx(np.var(frame.losses))
        assert est.epsilon_used == 0.0


def perfect_nuisance_learners(losses_by_row):
    """mu-hat equal to the loss itself; used when W carries the loss exactly."""

    class Mu:
        def fit(self, features, targets):
            return self

        def predict(self, features):
            return np.asarray(features[:, 0], dtype=np.float64)

    return Mu()


class TestCvarSpecialCase:
    def test_top_half_mean_with_perfect_nuisance(self):
        # W is the loss itself and mu-hat reproduces it, so the estimate is the
        # empirical tail mean: top half of [1,2,3,4] averages 3.5. Stratified
        # folds keep every fold's composition identical, making this exact.
        losses = np.array([1.0, 2.0, 3.0, 4.0] * 10)
        n = len(losses)
        folds = sr.assign_folds(n, 2, seed=0, stratify_labels=losses.astype(int))
        frame = sr.EvaluationFrame(
            losses=losses,
            w_block=losses.reshape(-1, 1),
            z_block=np.zeros((n, 0)),
            fold_id=folds.fold_id,
            row_ids=np.arange(n),
            w_names=("loss_copy",),
            z_names=(),
        )
        config = sr.EstimatorConfig(alpha=0.5, k_folds=2, discrete_noise_epsilon=0.0, seed=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sr.DiscreteMutablesWarning)
            est = sr.estimate_worst_case(frame, config, mu_learner=perfect_nuisance_learners(losses))
        assert est.r_hat == pytest.approx(3.5, abs=1e-9)
        # threshold is the left-endpoint median 2.0 and membership uses >=
        np.testing.assert_array_equal(est.h_indicators, (losses >= 2.0).astype(np.int8))


class TestEstimatorMechanics:
    def test_psi_mean_zero_fold_weighted(self, lattice, single_grid):
        frame = lattice_frame(lattice, 1000, seed=1)  # 1000 % 5 == 0: equal folds
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=1, tuning=single_grid)
        est = sr.estimate_worst_case(frame, config)
        assert abs(est.psi_values.mean()) < 1e-10
        fold_means = [est.psi_values[frame.fold_id == k].mean() for k in range(5)]
        assert abs(np.mean(fold_means)) < 1e-10

    def test_ci_brackets_r_hat_and_variance_matches_scores(self, lattice, single_grid):
        frame = lattice_frame(lattice, 600, seed=2)
        est = sr.estimate_worst_case(frame, sr.EstimatorConfig(alpha=0.25, k_folds=5, seed=2, tuning=single_grid))
        assert est.ci[0] <= est.r_hat <= est.ci[1]
        assert est.sigma2_hat == pytest.approx(sr.estimate_variance(est.psi_values, frame.fold_id))

    def test_indicator_matches_threshold_rule(self, lattice, single_grid):
        frame = lattice_frame(lattice, 800, seed=3)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=3, tuning=single_grid, discrete_noise_epsilon=0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = sr.estimate_worst_case(frame, config)
        np.testing.assert_array_equal(est.h_indicators, (est.mu_hat >= est.eta_hat).astype(np.int8))

    def test_noise_toggle_keeps_mu_and_folds(self, lattice, single_grid):
        frame = lattice_frame(lattice, 600, seed=4)
        base = dict(alpha=0.5, k_folds=5, seed=4, tuning=single_grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est0 = sr.estimate_worst_case(frame, sr.EstimatorConfig(discrete_noise_epsilon=0.0, **base))
        est1 = sr.estimate_worst_case(frame, sr.EstimatorConfig(discrete_noise_epsilon=1e-5, **base))
        np.testing.assert_array_equal(est0.mu_hat, est1.mu_hat)  # mu fits ignore epsilon
        assert est0.epsilon_used == 0.0 and est1.epsilon_used == 1e-5

    def test_epsilon_resolution_and_warnings(self, lattice, single_grid):
        frame = lattice_frame(lattice, 600, seed=5)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=5, tuning=single_grid)
        assert sr.resolve_epsilon(config, frame) == pytest.approx(1e-5)  # one-hot W is discrete
        with pytest.warns(sr.DiscreteMutablesWarning):
            sr.resolve_epsilon(
                sr.EstimatorConfig(alpha=0.5, k_folds=5, discrete_noise_epsilon=0.0), frame
            )
        # continuous W resolves to no noise
        toy = sr.generate_toy_sine(sr.ToySineConfig(n=100, seed=0))
        losses = sr.compute_losses(toy, sr.LossSpec(kind="precomputed", loss_column="loss"))
        toy_frame = sr.build_frame(
            toy, sr.VariablePartition(mutable_w=("x1", "x2")), losses, sr.assign_folds(100, 5, 0)
        )
        assert sr.resolve_epsilon(config, toy_frame) == 0.0

    def test_threads_do_not_change_results(self, lattice, single_grid):
        frame = lattice_frame(lattice, 750, seed=6)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=6, tuning=single_grid)
        a = sr.estimate_worst_case(frame, config, threads=1)
        b = sr.estimate_worst_case(frame, config, threads=4)
        assert a.r_hat == b.r_hat
        np.testing.assert_array_equal(a.psi_values, b.psi_values)

    def test_nuisance_fits_trained_out_of_fold(self, lattice, single_grid):
        frame = lattice_frame(lattice, 300, seed=13)
        seen = {}

        class RecordingMu:
            def fit(self, features, targets):
                seen[len(seen)] = np.asarray(targets).copy()
                return sr.OracleMuLearner(lattice).fit(features, targets)

        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=13)
        est = sr.estimate_worst_case(frame, config, mu_learner=RecordingMu())
        assert len(est.nuisance_fits) == 5
        assert tuple(fit.fold_index for fit in est.nuisance_fits) == (0, 1, 2, 3, 4)
        for k in range(5):
            np.testing.assert_array_equal(seen[k], frame.losses[frame.fold_id != k])
            assert len(est.nuisance_fits[k].noise_draws) == np.sum(frame.fold_id == k)

    def test_fold_count_mismatch(self, lattice):
        frame = lattice_frame(lattice, 100, seed=0, k_folds=4)
        with pytest.raises(sr.ConfigError):
            sr.estimate_worst_case(frame, sr.EstimatorConfig(alpha=0.5, k_folds=5))

    def test_insufficient_data(self, lattice):
        frame = lattice_frame(lattice, 100, seed=0, k_folds=5)
        small = sr.EvaluationFrame(
            losses=frame.losses[:8],
            w_block=frame.w_block[:8],
            z_block=frame.z_block[:8],
            fold_id=np.arange(8) % 5,
            row_ids=np.arange(8),
            w_names=frame.w_names,
            z_names=frame.z_names,
        )
        with pytest.raises(sr.InsufficientData):
            sr.estimate_worst_case(small, sr.EstimatorConfig(alpha=0.5, k_folds=5))

    def test_subsample_fraction_near_one_minus_alpha(self, lattice, single_grid):
        frame = lattice_frame(lattice, 4000, seed=7)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=7, tuning=single_grid)
        est = sr.estimate_worst_case(frame, config)
        band = 4 * np.sqrt(0.25 / frame.n_rows) + 0.02  # binomial plus learner slack
        assert abs(est.h_indicators.mean() - 0.5) < band


class TestRiskCurve:
    def test_grid_zero_is_mean(self, lattice):
        frame = lattice_frame(lattice, 300, seed=8)
        curve = sr.risk_curve(frame, [0.0], sr.EstimatorConfig(alpha=0.0, k_folds=5, seed=8))
        assert curve.estimates[0].r_hat == np.mean(frame.losses)

    def test_mu_shared_across_alpha(self, lattice, single_grid):
        frame = lattice_frame(lattice, 900, seed=9)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=9, tuning=single_grid)
        curve = sr.risk_curve(frame, [0.25, 0.5, 0.75], config)
        np.testing.assert_array_equal(curve.estimates[0].mu_hat, curve.estimates[1].mu_hat)
        np.testing.assert_array_equal(curve.estimates[1].mu_hat, curve.estimates[2].mu_hat)

    def test_curve_tracks_oracle_within_ci(self, lattice, single_grid):
        frame = lattice_frame(lattice, 6000, seed=10)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=10, tuning=single_grid)
        curve = sr.risk_curve(frame, [0.0, 0.5, 0.9], config)
        oracle = [sr.exact_worst_case_discrete(lattice, a) for a in (0.0, 0.5, 0.9)]
        assert all(b >= a - 1e-12 for a, b in zip(oracle, oracle[1:]))  # oracle non-decreasing
        for est, target in zip(curve.estimates, oracle):
            half = est.ci[1] - est.r_hat
            assert est.r_hat >= target - 2 * half - 1e-9
        # estimated curve non-decreasing within twice the CI half-width
        for prev, nxt in zip(curve.estimates, curve.estimates[1:]):
            assert nxt.r_hat >= prev.r_hat - 2 * (prev.ci[1] - prev.r_hat)

    def test_ci_width_grows_with_alpha(self, lattice, single_grid):
        frame = lattice_frame(lattice, 4000, seed=11)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=11, tuning=single_grid)
        curve = sr.risk_curve(frame, [0.5, 0.9], config)
        widths = [est.ci[1] - est.ci[0] for est in curve.estimates]
        assert widths[1] > widths[0]

    def test_grid_validation(self, lattice):
        frame = lattice_frame(lattice, 100, seed=0)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5)
        with pytest.raises(sr.ConfigError):
            sr.risk_curve(frame, [0.5, 0.5], config)
        with pytest.raises(sr.ConfigError):
            sr.risk_curve(frame, [0.2, 0.1], config)
        with pytest.raises(sr.ConfigError):
            sr.risk_curve(frame, [], config)


class TestOracleNuisanceRuns:
    def test_unbiased_against_exact_oracle(self, lattice):
        frame = lattice_frame(lattice, 20000, seed=12)
        config = sr.EstimatorConfig(alpha=0.5, k_folds=5, seed=12, discrete_noise_epsilon=0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            est = sr.estimate_worst_case(
                frame,
                config,
                mu_learner=sr.OracleMuLearner(lattice),
                eta_learner=sr.OracleEtaLearner(lattice, 0.0),
            )
        target = sr.exact_worst_case_discrete(lattice, 0.5)
        assert abs(est.r_hat - target) <= 3 * np.sqrt(est.sigma2_hat / frame.n_rows)

"""Update-rule, learning-rate and horizon-formula tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from privgrad.oracles import SmoothnessParams, VarianceParams
from privgrad.optimizers import (
    NsgdConfig,
    SgdConfig,
    TheoryParams,
    alpha0_nsgd,
    alpha0_sgd,
    clip_factor,
    dp_nsgd_step,
    dp_sgd_step,
    eta_limit_nsgd,
    eta_limit_sgd,
    min_iterations_nsgd,
    min_iterations_sgd,
    normalize_factor,
    nsgd_iteration_thresholds,
    nsgd_theory_config,
    sample_batch,
    sgd_theory_config,
    theorem_lr_nsgd,
    theorem_lr_sgd,
)


def theory(l0=1.0, l1=1.0, tau0=1.0, tau1=0.0, d_f=10.0, dim=10):
    return TheoryParams(SmoothnessParams(l0, l1), VarianceParams(tau0, tau1), d_f, dim)


class TestFactors:
    def test_normalize_factor_values(self):
        assert normalize_factor(0.0, 0.1) == pytest.approx(10.0, rel=1e-15)
        assert normalize_factor(0.99, 0.01) == pytest.approx(1.0, rel=1e-15)

    def test_clip_factor_values(self):
        assert clip_factor(0.5, 1.0) == 1.0
        assert clip_factor(1.0, 1.0) == 1.0
        assert clip_factor(2.0, 1.0) == 0.5
        assert clip_factor(0.0, 3.0) == 1.0  # continuous extension at zero

    @settings(max_examples=300, deadline=None)
    @given(g=st.floats(0.0, 1e6), r=st.floats(1e-6, 1e3))
    def test_normalized_contribution_below_one(self, g, r):
        assert normalize_factor(g, r) * g < 1.0

    @settings(max_examples=300, deadline=None)
    @given(g=st.floats(0.0, 1e6), c=st.floats(1e-6, 1e3))
    def test_clipped_contribution_at_most_c(self, g, c):
        assert clip_factor(g, c) * g <= c * (1 + 1e-12)

    def test_factor_ordering_fuzz(self):
        # c/(c+g) <= min(1, c/g) <= 2c/(c+g) on 1e5 random pairs.
        rng = np.random.default_rng(0)
        c = rng.uniform(1e-3, 100.0, 100_000)
        g = rng.uniform(0.0, 100.0, 100_000)
        clipped = np.minimum(1.0, np.divide(c, g, out=np.ones_like(g), where=g > 0))
        lower = c / (c + g)
        assert np.all(clipped >= lower - 1e-15)
        assert np.all(clipped <= 2 * lower + 1e-15)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            normalize_factor(1.0, 0.0)
        with pytest.raises(ValueError):
            clip_factor(1.0, -1.0)


class TestSteps:
    def test_nsgd_single_sample_example(self):
        # g aligned with one axis, norm equal to r: factor is 1/(2r).
        config = NsgdConfig(regularizer=1.0, sigma=0.0, eta=0.3, batch_size=1)
        x = np.zeros(3)
        out = dp_nsgd_step(x, np.array([[1.0, 0.0, 0.0]]), config, np.random.default_rng(0))
        assert out == pytest.approx([-0.15, 0.0, 0.0], rel=1e-15)

    def test_nsgd_symmetric_cancellation(self):
        config = NsgdConfig(regularizer=0.5, sigma=0.0, eta=0.2, batch_size=2)
        x = np.array([1.0, -2.0])
        g = np.array([0.3, 0.4])
        out = dp_nsgd_step(x, np.stack([g, -g]), config, np.random.default_rng(0))
        assert out == pytest.approx(x, abs=1e-15)

    def test_nsgd_deterministic_by_seed(self):
        config = NsgdConfig(regularizer=0.1, sigma=1.0, eta=0.05, batch_size=2)
        grads = np.random.default_rng(1).standard_normal((2, 4))
        x = np.ones(4)
        a = dp_nsgd_step(x, grads, config, np.random.default_rng(7))
        b = dp_nsgd_step(x, grads, config, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_sgd_plain_step_when_unclipped(self):
        config = SgdConfig(clip_threshold=10.0, sigma=0.0, eta=0.1, batch_size=2)
        x = np.array([1.0, 1.0])
        grads = np.array([[1.0, 0.0], [0.0, 2.0]])
        out = dp_sgd_step(x, grads, config, np.random.default_rng(0))
        assert out == pytest.approx(x - 0.1 * grads.mean(axis=0), rel=1e-15)

    def test_sgd_saturation_direction_invariance(self):
        config = SgdConfig(clip_threshold=0.5, sigma=0.0, eta=0.1, batch_size=2)
        x = np.zeros(3)
        grads = np.array([[3.0, 4.0, 0.0], [0.0, 5.0, 12.0]])
        small = dp_sgd_step(x, grads, config, np.random.default_rng(0))
        big = dp_sgd_step(x, 10.0 * grads, config, np.random.default_rng(0))
        assert big == pytest.approx(small, rel=1e-12)

    def test_sgd_matches_vanilla_sgd_without_noise(self):
        # Single sample, threshold above the gradient norm, sigma = 0.
        config = SgdConfig(clip_threshold=100.0, sigma=0.0, eta=0.25, batch_size=1)
        x = np.array([0.4, -1.2, 3.0])
        g = np.array([0.1, 0.2, -0.3])
        out = dp_sgd_step(x, g[None, :], config, np.random.default_rng(0))
        assert np.array_equal(out, x - 0.25 * g)

    def test_batch_permutation_equivariance(self):
        config = SgdConfig(clip_threshold=1.0, sigma=0.5, eta=0.1, batch_size=4)
        rng_grads = np.random.default_rng(2)
        grads = rng_grads.standard_normal((4, 5))
        x = np.zeros(5)
        out = dp_sgd_step(x, grads, config, np.random.default_rng(3))
        out_perm = dp_sgd_step(x, grads[::-1], config, np.random.default_rng(3))
        assert out_perm == pytest.approx(out, abs=1e-12)

    def test_batch_size_mismatch(self):
        config = NsgdConfig(regularizer=1.0, sigma=0.0, eta=0.1, batch_size=3)
        with pytest.raises(ValueError):
            dp_nsgd_step(np.zeros(2), np.ones((2, 2)), config, np.random.default_rng(0))
        sgd = SgdConfig(clip_threshold=1.0, sigma=0.0, eta=0.1, batch_size=1)
        with pytest.raises(ValueError):
            dp_sgd_step(np.zeros(2), np.ones((2, 2)), sgd, np.random.default_rng(0))

    def test_sensitivity_bounds_fuzz(self):
        # ||h g|| < 1 and ||hbar g|| <= c: the bounds that justify the noise
        # scales sigma and c sigma.
        rng = np.random.default_rng(4)
        norms = rng.uniform(0.0, 1e3, 100_000)
        rs = rng.uniform(1e-4, 10.0, 100_000)
        cs = rng.uniform(1e-4, 10.0, 100_000)
        assert np.all(norms / (rs + norms) < 1.0)
        clipped = np.minimum(1.0, np.divide(cs, norms, out=np.ones_like(cs), where=norms > 0))
        assert np.all(clipped * norms <= cs * (1 + 1e-12))


class TestTheoremLearningRates:
    def test_nsgd_arithmetic_example(self):
        # l0 = l1 = 1, r = 1, tau0 = 1, T = 2, d = 1, sigma = 1:
        # sqrt(2 / ((1 * 2 + 1) * 2)) = 1/sqrt(3).
        th = theory(dim=1)
        assert theorem_lr_nsgd(th, 1.0, 1.0, 2) == pytest.approx(1 / math.sqrt(3), rel=1e-14)

    def test_quadrupling_horizon_halves_eta(self):
        th = theory()
        assert theorem_lr_nsgd(th, 1.0, 1.0, 4000) == pytest.approx(
            theorem_lr_nsgd(th, 1.0, 1.0, 1000) / 2, rel=1e-14
        )

    def test_nsgd_ordinary_smooth_limit(self):
        th = theory(l1=0.0)
        expected = math.sqrt(2.0 / (1.0 * 500 * 10 * 4.0))
        assert theorem_lr_nsgd(th, 1.0, 2.0, 500) == pytest.approx(expected, rel=1e-14)

    def test_sgd_coincides_with_nsgd_at_unit_threshold(self):
        th = theory()
        assert theorem_lr_sgd(th, 1.0, 1.5, 100) == pytest.approx(
            theorem_lr_nsgd(th, 1.0, 1.5, 100), rel=1e-14
        )

    def test_sgd_inverse_threshold_scaling_without_l1(self):
        th = theory(l1=0.0)
        assert theorem_lr_sgd(th, 2.0, 1.0, 100) == pytest.approx(
            theorem_lr_sgd(th, 1.0, 1.0, 100) / 2, rel=1e-14
        )

    def test_sgd_arithmetic_example(self):
        # l0 = 1, l1 = 0, c = 2, tau0 = 0, T = 1, d = 1, sigma = 1:
        # sqrt(2 / 4) = 1/sqrt(2).
        th = theory(l1=0.0, tau0=0.0, dim=1)
        assert theorem_lr_sgd(th, 2.0, 1.0, 1) == pytest.approx(1 / math.sqrt(2), rel=1e-14)

    def test_sigma_zero_rejected(self):
        with pytest.raises(ValueError):
            theorem_lr_nsgd(theory(), 1.0, 0.0, 10)
        with pytest.raises(ValueError):
            theorem_lr_sgd(theory(), 1.0, 0.0, 10)


class TestAlpha0:
    def test_nsgd_example(self):
        assert alpha0_nsgd(VarianceParams(1.0, 0.0), 1.0) == pytest.approx(1 / 6, rel=1e-14)

    def test_sgd_example(self):
        assert alpha0_sgd(VarianceParams(1.0, 0.0), 2.0) == pytest.approx(1 / 4, rel=1e-14)

    def test_decreasing_in_parameter(self):
        var = VarianceParams(0.7, 0.2)
        nsgd_values = [alpha0_nsgd(var, r) for r in (0.5, 1.0, 2.0, 4.0)]
        sgd_values = [alpha0_sgd(var, c) for c in (0.5, 1.0, 2.0, 4.0)]
        assert nsgd_values == sorted(nsgd_values, reverse=True)
        assert sgd_values == sorted(sgd_values, reverse=True)

    @settings(max_examples=200, deadline=None)
    @given(
        tau0=st.floats(1e-6, 100.0),
        tau1=st.floats(0.0, 0.99),
        param=st.floats(1e-6, 100.0),
    )
    def test_stated_upper_bounds(self, tau0, tau1, param):
        var = VarianceParams(tau0, tau1)
        assert alpha0_nsgd(var, param) < 0.25
        assert alpha0_sgd(var, param) < 0.5


class TestMinIterations:
    def test_nsgd_eta_condition_at_minimum_horizon(self):
        # The property the horizon exists to guarantee: the prescribed eta is
        # admissible at T_min and inadmissible at T_min / 2.
        th = theory(tau1=0.5)
        t_min = min_iterations_nsgd(th, 1.5, 1.0)
        limit = eta_limit_nsgd(th, 1.5, 1.0)
        assert theorem_lr_nsgd(th, 1.5, 1.0, t_min) <= limit
        assert theorem_lr_nsgd(th, 1.5, 1.0, max(1, t_min // 2)) > limit

    def test_sgd_eta_condition_at_minimum_horizon(self):
        th = theory(tau1=0.5)
        t_min = min_iterations_sgd(th, 6.0, 1.0)
        limit = eta_limit_sgd(th, 6.0, 1.0)
        assert theorem_lr_sgd(th, 6.0, 1.0, t_min) <= limit
        assert theorem_lr_sgd(th, 6.0, 1.0, max(1, t_min // 2)) > limit

    def test_noise_reduces_first_two_nsgd_thresholds(self):
        th = theory(tau1=0.3)
        lo = nsgd_iteration_thresholds(th, 1.5, 1.0)
        hi = nsgd_iteration_thresholds(th, 1.5, 2.0)
        assert hi[0] < lo[0]
        assert hi[1] < lo[1]
        assert hi[2] == lo[2]  # the third does not involve sigma

    def test_dimension_scales_third_threshold(self):
        lo = nsgd_iteration_thresholds(theory(dim=5), 1.5, 1.0)
        hi = nsgd_iteration_thresholds(theory(dim=20), 1.5, 1.0)
        assert hi[2] == pytest.approx(4 * lo[2], rel=1e-12)

    def test_nsgd_degenerate_cases_raise(self):
        with pytest.raises(ValueError):
            min_iterations_nsgd(theory(), 0.5, 1.0)  # r <= tau0
        with pytest.raises(ValueError):
            min_iterations_nsgd(theory(l1=0.0), 1.5, 1.0)

    def test_tau1_zero_drops_middle_threshold(self):
        first, second, third = nsgd_iteration_thresholds(theory(tau1=0.0), 1.5, 1.0)
        assert second == 0.0
        assert first > 0 and third > 0

    def test_sgd_horizon_grows_with_noise(self):
        th = theory(tau1=0.5)
        assert min_iterations_sgd(th, 6.0, 2.0) > min_iterations_sgd(th, 6.0, 1.0)

    def test_sgd_without_l1_still_finite(self):
        th = theory(l1=0.0)
        t_min = min_iterations_sgd(th, 4.0, 1.0)
        assert 1 <= t_min < 10**9

    def test_sgd_threshold_precondition(self):
        with pytest.raises(ValueError):
            min_iterations_sgd(theory(tau1=0.5), 2.0, 1.0)  # needs c > 4


class TestTheoryConfigs:
    def test_nsgd_requires_regularizer_above_tau0(self):
        with pytest.raises(ValueError):
            nsgd_theory_config(theory(), 1.0, 1.0, 100)
        config = nsgd_theory_config(theory(), 1.5, 1.0, 100)
        assert config.eta == pytest.approx(theorem_lr_nsgd(theory(), 1.5, 1.0, 100))

    def test_sgd_requires_threshold_above_twice_tau0(self):
        with pytest.raises(ValueError):
            sgd_theory_config(theory(), 2.0, 1.0, 100)
        config = sgd_theory_config(theory(), 2.5, 1.0, 100)
        assert config.eta == pytest.approx(theorem_lr_sgd(theory(), 2.5, 1.0, 100))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            NsgdConfig(regularizer=0.0, sigma=1.0, eta=0.1, batch_size=1)
        with pytest.raises(ValueError):
            SgdConfig(clip_threshold=1.0, sigma=-1.0, eta=0.1, batch_size=1)
        with pytest.raises(ValueError):
            NsgdConfig(regularizer=1.0, sigma=1.0, eta=0.1, batch_size=0)


class TestSampleBatch:
    def test_full_batch_is_permutation(self):
        rng = np.random.default_rng(5)
        batch = sample_batch(10, 10, rng)
        assert sorted(batch.tolist()) == list(range(10))

    def test_indices_distinct_every_draw(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            batch = sample_batch(20, 7, rng)
            assert len(set(batch.tolist())) == 7

    def test_marginal_frequencies_uniform(self):
        # Each index should land in a 3-of-10 batch with frequency 0.3.
        rng = np.random.default_rng(123)
        n_draws = 100_000
        counts = np.zeros(10)
        for _ in range(n_draws):
            counts[sample_batch(10, 3, rng)] += 1
        freq = counts / n_draws
        stderr = math.sqrt(0.3 * 0.7 / n_draws)
        assert np.all(np.abs(freq - 0.3) <= 3 * stderr)

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValueError):
            sample_batch(5, 6, np.random.default_rng(0))

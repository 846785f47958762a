import unittest

import numpy as np
from scipy.integrate import trapezoid
from numpy.testing import assert_allclose
from scipy.special import expit

from langevin_saem.errors import DomainError
from langevin_saem.model_core import check_gradient, mean_field_residual, perturbed_objectives
from langevin_saem.models import (ArdLogisticModel, ConjugateGaussianOracle, LogisticGaussianModel,
                                  PoissonLogNormalModel, TheophyllineModel, ard_preconditioner,
                                  exact_em_fixed_point, logistic_loglik, m_step_ard, m_step_logistic_gaussian,
                                  oracle_exact_em, pk_concentration)
from langevin_saem.models.theophylline import SINGULAR_TOL


def small_theophylline(pk_form="printed"):
    times = [np.array([0.25, 1.0, 2.0, 4.0, 8.0, 24.0]), np.array([0.5, 1.0, 3.0, 6.0, 12.0])]
    concs = [np.array([2.8, 6.5, 9.6, 8.5, 6.9, 3.3]), np.array([7.9, 8.3, 6.8, 5.4, 3.0])]
    return TheophyllineModel([4.02, 4.40], times, concs, pk_form=pk_form)


THEOPH_THETA = np.array([0.4, -0.7, -3.2, 0.3, 0.3, 0.3, 0.7])


def all_models(rng):
    X = rng.standard_normal((40, 3))
    y_bin = (rng.uniform(size=40) < 0.5).astype(float)
    y_cnt = rng.poisson(2.0, size=40).astype(float)
    return [
        (LogisticGaussianModel(X, y_bin), np.array([0.3, 1.2])),
        (small_theophylline(), THEOPH_THETA),
        (small_theophylline("ke"), THEOPH_THETA),
        (PoissonLogNormalModel(X, y_cnt), np.array([0.1, -0.2, 0.3, 0.5, 0.8])),
        (ArdLogisticModel(X, y_bin), np.array([1.0, 2.0, 0.5])),
        (ConjugateGaussianOracle.generate(n_units=6, obs_per_unit=3, seed=1), np.array([0.5, 1.5])),
    ]


class TestLogistic(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_zero_coefficients_give_half_probability(self):
        X = self.rng.standard_normal((25, 4))
        y = (self.rng.uniform(size=25) < 0.5).astype(float)
        self.assertAlmostEqual(logistic_loglik(np.zeros(4), X, y), 25 * np.log(0.5), places=12)

    def test_zero_design_row(self):
        X = np.zeros((1, 3))
        for y in (0.0, 1.0):
            self.assertAlmostEqual(logistic_loglik(np.array([5.0, -2.0, 1.0]), X, np.array([y])), np.log(0.5))

    def test_matches_naive_formula(self):
        X = self.rng.standard_normal((30, 5))
        y = (self.rng.uniform(size=30) < 0.5).astype(float)
        beta = 0.5 * self.rng.standard_normal(5)
        p = expit(X @ beta)
        naive = np.sum(y * np.log(p) + (1 - y) * np.log(1 - p))
        self.assertAlmostEqual(logistic_loglik(beta, X, y), naive, delta=1e-10)

    def test_stable_for_extreme_margins(self):
        X = np.array([[1.0]])
        self.assertTrue(np.isfinite(logistic_loglik(np.array([1e4]), X, np.array([0.0]))))
        self.assertAlmostEqual(logistic_loglik(np.array([-800.0]), X, np.array([0.0])), 0.0)

    def test_broadcasts_over_leading_axes(self):
        X = self.rng.standard_normal((10, 3))
        y = (self.rng.uniform(size=10) < 0.5).astype(float)
        betas = self.rng.standard_normal((4, 3))
        batched = logistic_loglik(betas, X, y)
        self.assertEqual(batched.shape, (4,))
        self.assertAlmostEqual(batched[2], logistic_loglik(betas[2], X, y))

    def test_m_step_known_values(self):
        theta, clamped = m_step_logistic_gaussian(np.array([4.0, 10.0]), 2)
        assert_allclose(theta, [2.0, 1.0])
        self.assertFalse(clamped)

    def test_m_step_clamps_degenerate_variance(self):
        beta = np.full(5, 0.7)
        theta, clamped = m_step_logistic_gaussian(np.array([beta.sum(), (beta ** 2).sum()]), 5)
        self.assertTrue(clamped)
        self.assertAlmostEqual(theta[1], np.sqrt(1e-8))

    def test_m_step_random_moments(self):
        beta = self.rng.standard_normal(50)
        theta, _ = m_step_logistic_gaussian(np.array([beta.sum(), (beta ** 2).sum()]), 50)
        self.assertAlmostEqual(theta[0], beta.mean())
        self.assertAlmostEqual(theta[1], beta.std(), places=10)

    def test_dimension_mismatch(self):
        with self.assertRaises(DomainError):
            logistic_loglik(np.zeros(3), np.zeros((4, 2)), np.zeros(4))


class TestPharmacokinetics(unittest.TestCase):
    def test_zero_time(self):
        self.assertEqual(pk_concentration(1.0, 0.04, 1.5, 4.0, 0.0), 0.0)

    def test_direct_formula(self):
        V, Cl, ka, d, t = 1.0, 0.04, 1.5, 4.0, 1.0
        expected = d * ka / (V * (ka - Cl)) * (np.exp(-(Cl / V) * t) - np.exp(-ka * t))
        self.assertAlmostEqual(pk_concentration(V, Cl, ka, d, t), expected, delta=1e-12)

    def test_ke_form(self):
        V, Cl, ka, d, t = 0.5, 0.04, 1.5, 4.0, 2.0
        ke = Cl / V
        expected = d * ka / (V * (ka - ke)) * (np.exp(-ke * t) - np.exp(-ka * t))
        self.assertAlmostEqual(pk_concentration(V, Cl, ka, d, t, form="ke"), expected, delta=1e-12)

    def test_series_limit_near_singularity(self):
        V, d, t = 1.0, 4.0, 2.0
        ka = 1.5
        limit = d * ka * t * np.exp(-ka * t) / V
        at_singularity = pk_concentration(V, ka - 0.1 * SINGULAR_TOL, ka, d, t)
        self.assertAlmostEqual(at_singularity, limit, delta=1e-6)
        nearby = pk_concentration(V, ka - 1e-5, ka, d, t)
        self.assertAlmostEqual(nearby, limit, delta=1e-4)

    def test_ke_form_series_limit(self):
        V, d, t, ka = 0.5, 4.0, 3.0, 0.8
        limit = d * ka * t * np.exp(-ka * t) / V
        self.assertAlmostEqual(pk_concentration(V, ka * V, ka, d, t, form="ke"), limit, delta=1e-6)

    def test_printed_pole_away_from_unit_volume(self):
        V, ka, d = 2.0, 1.5, 4.0
        with self.assertRaises(DomainError):
            pk_concentration(V, ka, ka, d, 2.0)
        self.assertEqual(pk_concentration(V, ka, ka, d, 0.0), 0.0)
        # the ke form has no pole there
        ke = ka / V
        expected = d * ka / (V * (ka - ke)) * (np.exp(-ke * 2.0) - np.exp(-ka * 2.0))
        self.assertAlmostEqual(pk_concentration(V, ka, ka, d, 2.0, form="ke"), expected, delta=1e-12)

    def test_pole_gives_non_finite_patient_likelihood(self):
        model = small_theophylline()
        z = np.array([np.log(2.0), 0.0, 0.0, -0.7, 0.4, -3.2])
        unit = model.unit_log_likelihood(z, THEOPH_THETA)
        self.assertFalse(np.isfinite(unit[0]))
        self.assertTrue(np.isfinite(unit[1]))
        self.assertFalse(np.all(np.isfinite(model.grad_log_likelihood(z, THEOPH_THETA)[:3])))

    def test_domain_errors(self):
        with self.assertRaises(DomainError):
            pk_concentration(0.0, 0.04, 1.5, 4.0, 1.0)
        with self.assertRaises(DomainError):
            pk_concentration(1.0, 0.04, -1.0, 4.0, 1.0)
        with self.assertRaises(DomainError):
            pk_concentration(1.0, 0.04, 1.5, 4.0, 1.0, form="other")

    def test_patient_factorization(self):
        model = small_theophylline()
        rng = np.random.default_rng(3)
        z = np.tile([-0.7, 0.4, -3.2], 2) + 0.2 * rng.standard_normal(6)
        total = model.log_joint(z, THEOPH_THETA)
        per_unit = model.unit_log_prior(z, THEOPH_THETA) + model.unit_log_likelihood(z, THEOPH_THETA)
        self.assertAlmostEqual(total, per_unit.sum(), places=9)
        for i in range(2):
            single = model.subset([i])
            self.assertAlmostEqual(single.log_joint(z[3 * i:3 * i + 3], THEOPH_THETA), per_unit[i], places=9)

    def test_m_step_recovers_moments(self):
        model = small_theophylline()
        z = np.array([-0.5, 0.2, -3.0, -0.9, 0.6, -3.4])
        s = model.suff_stats(z)
        theta = model.m_step(s)
        zz = z.reshape(2, 3)
        assert_allclose(theta[[1, 0, 2]], zz.mean(axis=0))
        assert_allclose(theta[[4, 3, 5]], zz.std(axis=0))
        self.assertAlmostEqual(theta[6] ** 2, s[6] / model.n_obs)


class TestArd(unittest.TestCase):
    def test_m_step_examples(self):
        assert_allclose(m_step_ard(np.array([1.0, 4.0])), [1.0, 0.25])
        self.assertAlmostEqual(m_step_ard(np.array([0.0]))[0], 1e8)

    def test_preconditioner_formula(self):
        delta = 2e-16
        p = ard_preconditioner(np.array([1.0, 1.0]), delta)
        assert_allclose(p, [1 / 1.01 + delta, 1 / 1.01 + delta, 1.0], rtol=0, atol=1e-15)

    def test_preconditioner_pruned_coordinate(self):
        p = ard_preconditioner(np.array([1e12]), 2e-16)
        self.assertGreater(p[0], 0.0)
        self.assertAlmostEqual(p[0], 2e-16, delta=1e-23)

    def test_model_refreshes_preconditioner(self):
        rng = np.random.default_rng(0)
        model = ArdLogisticModel(rng.standard_normal((10, 2)), np.ones(10))
        assert_allclose(model.preconditioner(np.array([1.0, 3.0])), ard_preconditioner(np.array([1.0, 3.0])))

    def test_intercept_is_last_latent(self):
        model = ArdLogisticModel(np.zeros((4, 2)), np.ones(4))
        z = np.array([0.0, 0.0, 2.0])
        assert_allclose(model.suff_stats(z), [0.0, 0.0])
        self.assertAlmostEqual(model.log_likelihood(z, np.ones(2)), 4 * np.log(expit(2.0)))


class TestPoisson(unittest.TestCase):
    def test_m_step_is_least_squares(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((50, 2))
        model = PoissonLogNormalModel(X, rng.poisson(1.0, size=50))
        eta = rng.standard_normal(50)
        theta = model.m_step(model.suff_stats(eta))
        design = np.hstack([X, np.ones((50, 1))])
        coef, *_ = np.linalg.lstsq(design, eta, rcond=None)
        assert_allclose(theta[:-1], coef, atol=1e-10)
        self.assertAlmostEqual(theta[-1] ** 2, np.mean((eta - design @ coef) ** 2))

    def test_rejects_non_count_responses(self):
        with self.assertRaises(DomainError):
            PoissonLogNormalModel(np.zeros((2, 1)), np.array([1.5, 2.0]))


class TestModelContracts(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(11)
        self.models = all_models(self.rng)

    def test_gradient_check(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                z = model.sample_prior(theta, self.rng)
                report = check_gradient(model, z, theta)
                self.assertTrue(report.ok(1e-4), f"worst coordinate {report.worst_coordinate}: "
                                                 f"{report.max_relative_error:.2e}")

    def test_m_step_inverts_stats_from_params(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                assert_allclose(model.m_step(model.stats_from_params(theta)), theta, rtol=1e-8, atol=1e-10)

    def test_m_step_maximizes_objective(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                s = model.suff_stats(model.sample_prior(theta, self.rng))
                best, others = perturbed_objectives(model, s, self.rng, n_draws=100, radius=0.5)
                self.assertTrue(np.all(best >= others - 1e-9))

    def test_prior_sampling_shape(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                draws = model.sample_prior(theta, self.rng, size=7)
                self.assertEqual(draws.shape, (7, model.latent_dim))
                self.assertEqual(np.shape(model.log_joint(draws, theta)), (7,))

    def test_unit_terms_sum_to_joint(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                z = model.sample_prior(theta, self.rng, size=3)
                units = model.unit_log_prior(z, theta) + model.unit_log_likelihood(z, theta)
                self.assertEqual(units.shape, (3, model.n_units))
                assert_allclose(units.sum(axis=-1), model.log_joint(z, theta), rtol=1e-10)

    def test_chart_round_trip(self):
        for model, theta in self.models:
            with self.subTest(model=model.name):
                assert_allclose(model.unchart(model.chart(theta)), theta, rtol=1e-12)


class TestOracle(unittest.TestCase):
    def setUp(self):
        self.model = ConjugateGaussianOracle.generate(n_units=50, obs_per_unit=1, mu=1.0, tau2=2.0, seed=0)

    def test_em_constant_at_fixed_point(self):
        s_star = exact_em_fixed_point(self.model)
        theta_star = self.model.m_step(s_star)
        thetas = oracle_exact_em(self.model, theta_star, 5)
        assert_allclose(thetas, np.tile(theta_star, (6, 1)), atol=1e-10)
        assert_allclose(mean_field_residual(self.model, s_star), 0.0, atol=1e-10)

    def test_em_monotone_likelihood(self):
        for theta0 in ([-3.0, 0.1], [4.0, 10.0], [0.0, 1.0]):
            thetas = oracle_exact_em(self.model, np.array(theta0), 30)
            ll = [self.model.marginal_log_likelihood(t) for t in thetas]
            self.assertTrue(np.all(np.diff(ll) >= -1e-9))

    def test_em_converges_to_marginal_mle(self):
        thetas = oracle_exact_em(self.model, np.array([0.0, 1.0]), 300)
        mle = self.model.marginal_mle()
        assert_allclose(thetas[-1], mle, rtol=1e-6)

    def test_marginal_density_matches_numeric_integral(self):
        model = ConjugateGaussianOracle.generate(n_units=1, obs_per_unit=4, seed=5)
        theta = np.array([0.3, 0.8])
        grid = np.linspace(-10, 10, 40001)
        joint = np.exp(model.log_joint(grid[:, None], theta))
        numeric = np.log(trapezoid(joint, grid))
        self.assertAlmostEqual(model.marginal_log_likelihood(theta), numeric, places=6)

    def test_em_rejects_zero_iterations(self):
        with self.assertRaises(ValueError):
            oracle_exact_em(self.model, np.array([0.0, 1.0]), 0)


if __name__ == '__main__':
    unittest.main()

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from langevin_saem.errors import ConfigError, DomainError, EstimationError
from langevin_saem.evaluation import (AisConfig, LpdResult, PosteriorLpdConfig, ais_marginal_lpd, bootstrap_ci,
                                      lpd_from_draws, posterior_sample_lpd, quadratic_schedule)
from langevin_saem.mcmc import AdaptationConfig, KernelConfig
from langevin_saem.models import ConjugateGaussianOracle, LogisticGaussianModel


class FlatLikelihoodOracle(ConjugateGaussianOracle):
    def unit_log_likelihood(self, z, theta):
        return np.zeros(np.shape(z))

    def grad_log_likelihood(self, z, theta):
        return np.zeros(np.shape(z))


class ImpossibleDataOracle(FlatLikelihoodOracle):
    def unit_log_likelihood(self, z, theta):
        return np.full(np.shape(z), -np.inf)


class TestAnnealedImportanceSampling(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(123)

    def test_quadratic_schedule(self):
        assert_allclose(quadratic_schedule(4), [0.0, 1 / 16, 0.25, 9 / 16, 1.0])
        with self.assertRaises(DomainError):
            quadratic_schedule(0)

    def test_config_validation(self):
        with self.assertRaises(ConfigError):
            AisConfig(n_weights=0)
        with self.assertRaises(ConfigError):
            AisConfig(kernel=KernelConfig(eta=0.01, adjusted=True, adaptation=AdaptationConfig()))
        cfg = AisConfig(kernel={"eta": 0.02, "adjusted": True})
        self.assertEqual(cfg.kernel.eta, 0.02)
        self.assertEqual(cfg.to_dict()["kernel"], {"eta": 0.02, "adjusted": True})

    def test_flat_likelihood_gives_zero(self):
        model = FlatLikelihoodOracle(np.zeros((3, 2)))
        lpd = ais_marginal_lpd(model, np.array([0.0, 1.0]), AisConfig(n_weights=10, n_annealing_steps=20),
                               self.rng)
        self.assertEqual(lpd.shape, (3,))
        assert_allclose(lpd, 0.0, atol=1e-12)

    def test_matches_closed_form_marginal(self):
        model = ConjugateGaussianOracle.generate(n_units=5, obs_per_unit=4, mu=0.5, tau2=1.0, seed=8)
        theta = np.array([0.5, 1.0])
        cfg = AisConfig(n_weights=1000, n_annealing_steps=500, kernel=KernelConfig(eta=0.05, adjusted=True))
        lpd = ais_marginal_lpd(model, theta, cfg, self.rng)
        assert_allclose(lpd, model.unit_marginal_log_density(theta), atol=0.05)

    def test_vanishing_weights(self):
        model = ImpossibleDataOracle(np.zeros((2, 1)))
        cfg = AisConfig(n_weights=5, n_annealing_steps=3, kernel=KernelConfig(eta=0.01))
        with self.assertRaises(EstimationError):
            ais_marginal_lpd(model, np.array([0.0, 1.0]), cfg, self.rng)


class TestPosteriorLpd(unittest.TestCase):
    def test_single_draw_is_plug_in(self):
        ll = np.log(np.array([[0.2, 0.5, 0.9]]))
        assert_allclose(lpd_from_draws(ll), ll[0])

    def test_averages_densities_not_logs(self):
        ll = np.log(np.array([[0.2], [0.6]]))
        assert_allclose(lpd_from_draws(ll), [np.log(0.4)])

    def test_invariant_to_draw_order(self):
        ll = np.random.default_rng(0).normal(size=(50, 4))
        assert_allclose(lpd_from_draws(ll[::-1]), lpd_from_draws(ll))

    def test_identical_test_points(self):
        ll = np.tile(np.random.default_rng(1).normal(size=(30, 1)), (1, 3))
        lpd = lpd_from_draws(ll)
        assert_allclose(lpd, lpd[0])

    def test_rejects_empty_draws(self):
        with self.assertRaises(DomainError):
            lpd_from_draws(np.empty((0, 3)))

    def test_matches_quadrature_in_one_dimension(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((30, 1))
        y = (rng.uniform(size=30) < 1 / (1 + np.exp(-1.5 * x[:, 0]))).astype(float)
        train = LogisticGaussianModel(x, y)
        x_test = np.array([[-2.0], [-0.5], [0.0], [1.0], [2.5]])
        test = LogisticGaussianModel(x_test, np.array([0.0, 1.0, 1.0, 0.0, 1.0]))
        theta = np.array([0.0, 1.0])

        grid = np.linspace(-8.0, 8.0, 8001)[:, None]
        log_post = train.log_joint(grid, theta)
        w = np.exp(log_post - log_post.max())
        w /= w.sum()
        expected = np.log(w @ np.exp(test.pointwise_log_likelihood(grid, theta)))

        cfg = PosteriorLpdConfig(n_samples=2000, adaptation_steps=2000, initial_eta=0.05)
        result = posterior_sample_lpd(train, theta, test, cfg, rng, z0=np.zeros(1))
        self.assertEqual(result.n_units, 5)
        assert_allclose(result.lpd, expected, atol=0.05)
        self.assertLessEqual(result.ci_lower, result.mean)
        self.assertLessEqual(result.mean, result.ci_upper)

    def test_latent_layout_mismatch(self):
        train = LogisticGaussianModel(np.zeros((3, 2)), np.zeros(3))
        test = LogisticGaussianModel(np.zeros((3, 1)), np.zeros(3))
        with self.assertRaises(DomainError):
            posterior_sample_lpd(train, np.array([0.0, 1.0]), test, PosteriorLpdConfig(), np.random.default_rng(0))


class TestBootstrap(unittest.TestCase):
    def test_constant_values_degenerate(self):
        self.assertEqual(bootstrap_ci([2.5, 2.5, 2.5]), (2.5, 2.5))
        self.assertEqual(bootstrap_ci([-1.0]), (-1.0, -1.0))

    def test_interval_brackets_mean(self):
        rng = np.random.default_rng(0)
        values = rng.normal(3.0, 1.0, size=200)
        lower, upper = bootstrap_ci(values, rng=rng)
        self.assertLess(lower, values.mean())
        self.assertGreater(upper, values.mean())
        # 80% interval of a mean with standard error ~0.07
        self.assertLess(upper - lower, 0.3)

    def test_reproducible_with_seeded_rng(self):
        values = np.arange(20.0)
        a = bootstrap_ci(values, rng=np.random.default_rng(5))
        b = bootstrap_ci(values, rng=np.random.default_rng(5))
        self.assertEqual(a, b)

    def test_invalid_input(self):
        with self.assertRaises(DomainError):
            bootstrap_ci([])
        with self.assertRaises(DomainError):
            bootstrap_ci([1.0, 2.0], level=1.0)


class TestLpdResult(unittest.TestCase):
    def test_writes_csv_and_json(self):
        result = LpdResult.from_values([-1.0, -2.0, -3.0], unit_ids=["a", "b", "c"],
                                       rng=np.random.default_rng(0))
        self.assertAlmostEqual(result.mean, -2.0)
        with tempfile.TemporaryDirectory() as tmp:
            csv_path = result.to_csv(Path(tmp) / 'lpd' / 'run.csv')
            df = pd.read_csv(csv_path)
            self.assertEqual(list(df.columns), ["unit_id", "lpd"])
            self.assertEqual(df['unit_id'].tolist(), ["a", "b", "c"])
            summary = json.loads(result.to_json(Path(tmp) / 'lpd.json').read_text())
        self.assertEqual(summary["n_units"], 3)
        self.assertAlmostEqual(summary["mean"], -2.0)


if __name__ == '__main__':
    unittest.main()

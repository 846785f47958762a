import unittest

import numpy as np
from numpy.testing import assert_allclose

from langevin_saem.errors import CapabilityError, DomainError, GradientCheckError, ParameterError
from langevin_saem.model_core import as_stats, check_gradient_fn, mean_field_residual
from langevin_saem.models import ConjugateGaussianOracle, LogisticGaussianModel


class TestGradientCheck(unittest.TestCase):
    def test_correct_gradient_passes(self):
        report = check_gradient_fn(lambda x: np.sum(np.sin(x)), np.cos, np.array([0.1, 1.0, -2.0]))
        self.assertTrue(report.ok(1e-6))
        self.assertLess(report.max_absolute_error, 1e-8)

    def test_wrong_gradient_fails(self):
        report = check_gradient_fn(lambda x: np.sum(x ** 3), lambda x: 2 * x, np.array([0.5, 2.0]))
        self.assertFalse(report.ok(1e-4))
        self.assertEqual(report.worst_coordinate, 1)

    def test_near_zero_gradient_judged_absolutely(self):
        # Gradient vanishes at the origin; relative error is meaningless there
        report = check_gradient_fn(lambda x: np.sum(x ** 2), lambda x: 2 * x, np.zeros(3))
        self.assertTrue(report.ok(1e-6))

    def test_non_finite_density(self):
        with self.assertRaises(GradientCheckError) as ctx:
            check_gradient_fn(lambda x: np.sum(np.log(x)), lambda x: 1 / x, np.array([1.0, 0.0]))
        self.assertEqual(ctx.exception.coordinate, 1)

    def test_non_positive_step(self):
        with self.assertRaises(DomainError):
            check_gradient_fn(np.sum, np.ones_like, np.zeros(2), h=0.0)


class TestParameters(unittest.TestCase):
    def setUp(self):
        self.model = LogisticGaussianModel(np.eye(3), np.array([0.0, 1.0, 1.0]))

    def test_chart_maps_sigma_to_log_variance(self):
        assert_allclose(self.model.chart(np.array([0.5, 2.0])), [0.5, 2 * np.log(2.0)])

    def test_check_params_rejects_non_positive_scale(self):
        with self.assertRaises(ParameterError) as ctx:
            self.model.check_params(np.array([0.0, -1.0]))
        self.assertEqual(ctx.exception.name, "sigma")

    def test_check_params_rejects_nan(self):
        with self.assertRaises(ParameterError):
            self.model.check_params(np.array([np.nan, 1.0]))

    def test_exact_posterior_capability(self):
        with self.assertRaises(CapabilityError):
            mean_field_residual(self.model, np.array([0.0, 1.0]))
        with self.assertRaises(CapabilityError):
            self.model.sample_posterior(np.array([0.0, 1.0]), np.random.default_rng(0))

    def test_as_stats_shape(self):
        assert_allclose(as_stats([1, 2], self.model), [1.0, 2.0])
        with self.assertRaises(DomainError):
            as_stats([1, 2, 3], self.model)

    def test_posterior_target_per_unit(self):
        oracle = ConjugateGaussianOracle.generate(n_units=4, seed=0)
        theta = np.array([0.0, 1.0])
        joint, force = oracle.posterior_target(theta)
        per_unit, _ = oracle.posterior_target(theta, per_unit=True)
        z = np.linspace(-1, 1, 4)
        self.assertEqual(per_unit(z).shape, (4,))
        self.assertAlmostEqual(per_unit(z).sum(), joint(z))
        assert_allclose(force(z), oracle.grad_z_log_joint(z, theta))


if __name__ == '__main__':
    unittest.main()

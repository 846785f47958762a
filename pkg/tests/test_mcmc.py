import unittest
from unittest.mock import patch

import numpy as np
from numpy.testing import assert_allclose

from langevin_saem.errors import ConfigError, DivergenceError
from langevin_saem.mcmc import (AdaptationConfig, KernelConfig, adapt_stepsize, block_matrix, init_state,
                                mala_step, run_chain, ula_step)


def gaussian_target(scale=1.0):
    var = np.asarray(scale, dtype=float) ** 2

    def log_density(x):
        return -0.5 * np.sum(x ** 2 / var, axis=-1)

    def force(x):
        return -x / var

    return log_density, force


class TestKernelConfig(unittest.TestCase):
    def test_rejects_bad_stepsize(self):
        for eta in (0.0, -1.0, float("nan"), float("inf")):
            with self.assertRaises(ConfigError):
                KernelConfig(eta=eta)

    def test_rejects_bad_preconditioner(self):
        with self.assertRaises(ConfigError):
            KernelConfig(eta=0.1, preconditioner=np.array([1.0, -1.0]))

    def test_adaptation_needs_mala(self):
        with self.assertRaises(ConfigError):
            KernelConfig(eta=0.1, adjusted=False, adaptation=AdaptationConfig())

    def test_dict_round_trip(self):
        cfg = KernelConfig(eta=0.05, adjusted=True, preconditioner=np.array([1.0, 2.0]),
                           adaptation=AdaptationConfig(adaptation_steps=10))
        back = KernelConfig.from_dict(cfg.to_dict())
        self.assertEqual(back.eta, 0.05)
        self.assertTrue(back.adjusted)
        assert_allclose(back.preconditioner, [1.0, 2.0])
        self.assertEqual(back.adaptation.adaptation_steps, 10)
        self.assertEqual(back.name, "mala")

    def test_block_matrix(self):
        m = block_matrix(np.array([0, 0, 1, 2, 1]))
        self.assertEqual(m.shape, (5, 3))
        assert_allclose(m.sum(axis=0), [2, 2, 1])
        assert_allclose(m.sum(axis=1), 1.0)


class TestUla(unittest.TestCase):
    def test_step_matches_update_rule(self):
        log_density, force = gaussian_target()
        cfg = KernelConfig(eta=0.1)
        x0 = np.array([1.0, -2.0, 0.5])
        state = ula_step(init_state(x0, cfg), force, cfg, np.random.default_rng(4))
        noise = np.random.default_rng(4).standard_normal(3)
        expected = x0 + 0.1 * (-x0) + np.sqrt(0.2) * noise
        assert_allclose(state.position, expected, rtol=1e-14)
        self.assertEqual(state.acceptance_rate, 1.0)
        self.assertEqual(state.step_index, 1)

    def test_does_not_mutate_initial_array(self):
        _, force = gaussian_target()
        cfg = KernelConfig(eta=0.1)
        x0 = np.zeros(2)
        run_chain(x0, 5, None, force, cfg, np.random.default_rng(0))
        assert_allclose(x0, 0.0)

    def test_unstable_stepsize_diverges(self):
        _, force = gaussian_target()
        cfg = KernelConfig(eta=3.0)
        with self.assertRaises(DivergenceError) as ctx:
            run_chain(np.ones(2), 500, None, force, cfg, np.random.default_rng(0))
        self.assertEqual(ctx.exception.eta, 3.0)

    def test_rejects_adjusted_config(self):
        _, force = gaussian_target()
        cfg = KernelConfig(eta=0.1, adjusted=True)
        with self.assertRaises(ConfigError):
            ula_step(init_state(np.zeros(2), cfg), force, cfg, np.random.default_rng(0))

    def test_stationary_variance_follows_bias_law(self):
        n = 100_000
        for sigma2, eta in ((1.0, 0.1), (1.0, 0.5), (2.0, 0.5)):
            with self.subTest(sigma2=sigma2, eta=eta):
                _, force = gaussian_target(np.sqrt(sigma2))
                state, _ = run_chain(np.zeros((n, 1)), 300, None, force, KernelConfig(eta=eta),
                                     np.random.default_rng(17))
                analytic = sigma2 / (1.0 - eta / (2.0 * sigma2))
                se = analytic * np.sqrt(2.0 / n)
                self.assertLess(abs(np.mean(state.position ** 2) - analytic), 4 * se)
                self.assertGreater(analytic - sigma2, 4 * se)

    def test_keep_trace(self):
        _, force = gaussian_target()
        cfg = KernelConfig(eta=0.1)
        state, samples = run_chain(np.zeros(3), 7, None, force, cfg, np.random.default_rng(0), keep_trace=True)
        self.assertEqual(samples.shape, (7, 3))
        assert_allclose(samples[-1], state.position)


class TestMala(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(42)

    def test_preserves_standard_normal(self):
        log_density, force = gaussian_target()
        n = 20_000
        for eta in (0.01, 0.1):
            with self.subTest(eta=eta):
                cfg = KernelConfig(eta=eta, adjusted=True)
                x0 = 0.5 + 2.0 * self.rng.standard_normal((n, 1))
                state, _ = run_chain(x0, 1500, log_density, force, cfg, self.rng)
                x = state.position[:, 0]
                self.assertLess(abs(x.mean()), 3 * np.sqrt(1.0 / n))
                self.assertLess(abs(x.var() - 1.0), 3 * np.sqrt(2.0 / n))
                self.assertGreater(state.acceptance_rate, 0.9)

    def test_preconditioner_equivariance(self):
        scale = np.array([3.0, 0.2])
        _, force_unit = gaussian_target()
        log_scaled, force_scaled = gaussian_target(scale)
        log_unit = gaussian_target()[0]
        for adjusted in (False, True):
            with self.subTest(adjusted=adjusted):
                plain = KernelConfig(eta=0.3, adjusted=adjusted)
                precond = KernelConfig(eta=0.3, adjusted=adjusted, preconditioner=scale ** 2)
                u0 = np.array([0.4, -1.1])
                u_state, _ = run_chain(u0, 50, log_unit, force_unit, plain, np.random.default_rng(9))
                x_state, _ = run_chain(scale * u0, 50, log_scaled, force_scaled, precond,
                                       np.random.default_rng(9))
                assert_allclose(x_state.position, scale * u_state.position, rtol=1e-10)

    def test_single_block_matches_unblocked(self):
        log_density, force = gaussian_target()

        def per_unit(x):
            return log_density(x)[..., None]

        cfg = KernelConfig(eta=0.8, adjusted=True)
        x0 = np.array([0.3, -0.2, 1.5])
        a, _ = run_chain(x0, 30, log_density, force, cfg, np.random.default_rng(5))
        b, _ = run_chain(x0, 30, per_unit, force, cfg, np.random.default_rng(5), blocks=np.zeros(3, dtype=int))
        assert_allclose(a.position, b.position, rtol=1e-12)
        self.assertEqual(a.accept_count, b.accept_count)

    def test_blocks_accept_independently(self):
        log_density, force = gaussian_target()

        def per_unit(x):
            return -0.5 * x ** 2

        cfg = KernelConfig(eta=1.5, adjusted=True)
        state, _ = run_chain(np.zeros(200), 1, per_unit, force, cfg, self.rng, blocks=np.arange(200))
        self.assertEqual(state.proposal_count, 200)
        self.assertTrue(0 < state.accept_count < 200)
        moved = np.count_nonzero(state.position)
        self.assertEqual(moved, state.accept_count)

    def test_non_finite_current_state(self):
        cfg = KernelConfig(eta=0.1, adjusted=True)
        state = init_state(np.zeros(2), cfg)
        with self.assertRaises(DivergenceError):
            mala_step(state, lambda x: -np.inf, lambda x: np.zeros_like(x), cfg, self.rng)

    @patch('langevin_saem.mcmc.mala_log_accept_ratio')
    def test_overflowing_unit_is_rejected_whole(self, mock_ratio):
        mock_ratio.return_value = np.zeros(2)
        blocks = np.array([0, 0, 1, 1])
        x0 = np.array([0.1, 0.2, 0.3, 0.4])

        def force(x):
            return np.where(np.arange(4) == 0, 1e308, 0.0)

        cfg = KernelConfig(eta=10.0, adjusted=True)
        state = mala_step(init_state(x0, cfg), lambda x: np.zeros(2), force, cfg, self.rng, blocks=blocks)
        assert_allclose(state.position[:2], x0[:2])
        self.assertTrue(np.all(state.position[2:] != x0[2:]))
        self.assertTrue(np.all(np.isfinite(state.position)))
        self.assertEqual(state.accept_count, 1)
        self.assertEqual(state.proposal_count, 2)

    def test_dual_averaging_reaches_target(self):
        log_density, force = gaussian_target()
        cfg = KernelConfig(eta=0.01, adjusted=True, adaptation=AdaptationConfig(adaptation_steps=500))
        x0 = self.rng.standard_normal((50, 10))
        state, _ = run_chain(x0, 500, log_density, force, cfg, self.rng)
        frozen = state.eta
        self.assertAlmostEqual(frozen, np.exp(state.dual_averaging.log_eta_avg))
        state.reset_counters()
        state, _ = run_chain(state, 500, log_density, force, cfg, self.rng)
        self.assertEqual(state.eta, frozen)
        self.assertLess(abs(state.acceptance_rate - 0.57), 0.1)

    def test_large_stepsize_rejects(self):
        log_density, force = gaussian_target()
        cfg = KernelConfig(eta=5.0, adjusted=True)
        state, _ = run_chain(self.rng.standard_normal((200, 1)), 50, log_density, force, cfg, self.rng)
        self.assertLess(state.acceptance_rate, 0.5)

    def test_zero_steps_leave_state(self):
        log_density, force = gaussian_target()
        cfg = KernelConfig(eta=0.1, adjusted=True)
        x0 = np.array([0.2, -0.4])
        state, samples = run_chain(x0, 0, log_density, force, cfg, self.rng, keep_trace=True)
        assert_allclose(state.position, x0)
        self.assertEqual(samples.shape, (0, 2))


class TestDualAveraging(unittest.TestCase):
    def setUp(self):
        self.cfg = KernelConfig(eta=0.1, adjusted=True, adaptation=AdaptationConfig(adaptation_steps=100))

    def run_updates(self, accepted, n=20):
        state = init_state(np.zeros(1), self.cfg)
        etas = []
        for _ in range(n):
            adapt_stepsize(state, accepted, self.cfg)
            etas.append(state.eta)
        return np.array(etas)

    def test_acceptance_surplus_grows_stepsize(self):
        self.assertTrue(np.all(np.diff(self.run_updates(1.0)) > 0))

    def test_rejections_shrink_stepsize(self):
        self.assertTrue(np.all(np.diff(self.run_updates(0.0)) < 0))

    def test_no_adaptation_is_noop(self):
        cfg = KernelConfig(eta=0.1, adjusted=True)
        state = adapt_stepsize(init_state(np.zeros(1), cfg), 1.0, cfg)
        self.assertEqual(state.eta, 0.1)
        self.assertIsNone(state.dual_averaging)


if __name__ == '__main__':
    unittest.main()

"""Benchmark latent-variable models."""
from langevin_saem.models.ard import ArdLogisticModel, ard_preconditioner, m_step_ard
from langevin_saem.models.logistic import LogisticGaussianModel, logistic_loglik, m_step_logistic_gaussian
from langevin_saem.models.oracle import ConjugateGaussianOracle, exact_em_fixed_point, oracle_exact_em
from langevin_saem.models.poisson import PoissonLogNormalModel
from langevin_saem.models.theophylline import TheophyllineModel, pk_concentration

__all__ = [
    "ArdLogisticModel",
    "ConjugateGaussianOracle",
    "LogisticGaussianModel",
    "PoissonLogNormalModel",
    "TheophyllineModel",
    "ard_preconditioner",
    "exact_em_fixed_point",
    "logistic_loglik",
    "m_step_ard",
    "m_step_logistic_gaussian",
    "oracle_exact_em",
    "pk_concentration",
]

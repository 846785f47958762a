"""
One-compartment pharmacokinetic mixed-effects model (Theophylline).

Per patient i with dose d_i and sampling times t_ij:

    log V_i ~ N(μ_V, σ_V²),  log ka_i ~ N(μ_ka, σ_ka²),  log Cl_i ~ N(μ_Cl, σ_Cl²)
    y_ij ~ N(h(V_i, Cl_i, ka_i, t_ij), σ²)

Latents are laid out patient-major as z_i = (log V_i, log ka_i, log Cl_i);
θ = (μ_ka, μ_V, μ_Cl, σ_ka, σ_V, σ_Cl, σ).
"""
import logging
from typing import List, Sequence

import numpy as np

from langevin_saem.errors import DomainError
from langevin_saem.model_core import LatentModel

logger = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
LOG_2PI = np.log(2 * np.pi)
# Below this |ka − c| the curve is evaluated through its series limit
SINGULAR_TOL = 1e-8
PK_FORMS = ("printed", "ke")

# θ index of (μ, σ) for each latent column (log V, log ka, log Cl)
_MU_INDEX = np.array([1, 0, 2])
_SD_INDEX = np.array([4, 3, 5])


def pk_concentration(V, Cl, ka, d, t, form: str = "printed"):
    """Drug concentration of the first-order one-compartment model.

    ``form='printed'``: d·ka / (V (ka − Cl)) · (exp(−(Cl/V) t) − exp(−ka t)).
    ``form='ke'``: the standard curve with ke = Cl/V in the denominator too.
    Where numerator and denominator both vanish (ka = Cl/V, and also ka = Cl in the
    printed form) the series limit d·ka·t·exp(−ka t)/V is used. The printed curve has
    a pole at ka = Cl when V ≠ 1; evaluating it there is a DomainError.
    """
    V = np.asarray(V, dtype=float)
    ka = np.asarray(ka, dtype=float)
    if np.any(V <= 0) or np.any(ka <= 0):
        raise DomainError("volume and absorption rate must be positive")
    if np.any(np.asarray(t) < 0):
        raise DomainError("sampling times must be non-negative")
    conc, _ = _pk_curve(V, np.asarray(Cl, dtype=float), ka, np.asarray(d, dtype=float),
                        np.asarray(t, dtype=float), form, with_grad=False)
    if np.any(np.isnan(conc)):
        raise DomainError("printed curve is singular at ka = Cl unless V = 1")
    return conc


def _pk_curve(V, Cl, ka, d, t, form, with_grad=True):
    """Concentration and its derivatives w.r.t. (log V, log ka, log Cl)."""
    if form not in PK_FORMS:
        raise DomainError(f"unknown pharmacokinetic form {form!r}")
    r = Cl / V
    c = Cl if form == "printed" else r
    D = ka - c
    A = d * ka / V
    e_ka = np.exp(-ka * t)
    e_r = np.exp(-r * t)
    singular = np.abs(D) < SINGULAR_TOL
    # E vanishes at ka = r; in the printed form D vanishes at ka = Cl, so only
    # V = 1 makes that point removable
    removable = singular & (np.abs(ka - r) < SINGULAR_TOL)
    pole = singular & ~removable & (t > 0)
    safe_D = np.where(singular, 1.0, D)
    # exp(−r t) − exp(−ka t) = exp(−ka t) · expm1((ka − r) t)
    E = e_ka * np.expm1((ka - r) * t)
    h_series = A * t * e_ka
    h = np.where(removable, h_series, np.where(pole, np.nan, A * E / safe_D))
    if not with_grad:
        return h, None

    dE = np.stack([r * t * e_r, ka * t * e_ka, -r * t * e_r], axis=-1)
    dA_over_A = np.array([-1.0, 1.0, 0.0])
    if form == "printed":
        dD = np.stack([np.zeros_like(D), ka, -Cl * np.ones_like(D)], axis=-1)
    else:
        dD = np.stack([r * np.ones_like(D), ka, -r * np.ones_like(D)], axis=-1)
    grad = (h[..., None] * dA_over_A + (A / safe_D)[..., None] * dE
            - (h / safe_D)[..., None] * dD)
    grad_series = np.stack([-h_series, h_series * (1.0 - ka * t), np.zeros_like(h_series)], axis=-1)
    grad = np.where(removable[..., None], grad_series, grad)
    grad = np.where(pole[..., None], np.nan, grad)
    return h, grad


class TheophyllineModel(LatentModel):
    name = "theophylline"
    param_names = ("mu_ka", "mu_V", "mu_Cl", "sigma_ka", "sigma_V", "sigma_Cl", "sigma")
    chart_exponents = (0, 0, 0, 2, 2, 2, 2)
    stat_dim = 7

    def __init__(self, doses: Sequence[float], times: List[np.ndarray], concentrations: List[np.ndarray],
                 pk_form: str = "printed", patient_ids: Sequence = None):
        if pk_form not in PK_FORMS:
            raise DomainError(f"unknown pharmacokinetic form {pk_form!r}")
        self.pk_form = pk_form
        self.n_patients = len(doses)
        self.patient_ids = list(patient_ids) if patient_ids is not None else list(range(self.n_patients))
        # Ragged records are padded to a rectangle and masked
        n_max = max(len(t) for t in times)
        self.times = np.zeros((self.n_patients, n_max))
        self.conc = np.zeros((self.n_patients, n_max))
        self.mask = np.zeros((self.n_patients, n_max), dtype=bool)
        for i, (t, y) in enumerate(zip(times, concentrations)):
            self.times[i, :len(t)] = t
            self.conc[i, :len(y)] = y
            self.mask[i, :len(t)] = True
        self.doses = np.asarray(doses, dtype=float)
        self.n_obs = int(self.mask.sum())
        self.latent_dim = 3 * self.n_patients
        self.unit_index = np.repeat(np.arange(self.n_patients), 3)

    @classmethod
    def from_dataset(cls, dataset, pk_form: str = "printed") -> "TheophyllineModel":
        doses, times, concs, ids = [], [], [], []
        for pid, rows in dataset.frame.groupby(dataset.unit_column, sort=False):
            ids.append(pid)
            doses.append(float(rows["dose"].iloc[0]))
            times.append(rows["time"].to_numpy(dtype=float))
            concs.append(rows[dataset.response].to_numpy(dtype=float))
        return cls(doses, times, concs, pk_form=pk_form, patient_ids=ids)

    def subset(self, patients: Sequence[int]) -> "TheophyllineModel":
        idx = np.asarray(patients, dtype=int)
        return TheophyllineModel(self.doses[idx], [self.times[i][self.mask[i]] for i in idx],
                                 [self.conc[i][self.mask[i]] for i in idx], self.pk_form,
                                 [self.patient_ids[i] for i in idx])

    def _unpack(self, z):
        z = np.asarray(z, dtype=float)
        return z.reshape(z.shape[:-1] + (self.n_patients, 3))

    def _curve(self, z, with_grad=True):
        zz = self._unpack(z)
        V = np.exp(zz[..., 0])[..., None]
        ka = np.exp(zz[..., 1])[..., None]
        Cl = np.exp(zz[..., 2])[..., None]
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return _pk_curve(V, Cl, ka, self.doses[:, None], self.times, self.pk_form, with_grad)

    # -- densities -------------------------------------------------------

    def unit_log_prior(self, z, theta):
        theta = np.asarray(theta, dtype=float)
        zz = self._unpack(z)
        mu = theta[_MU_INDEX]
        sd = theta[_SD_INDEX]
        return (-0.5 * ((zz - mu) / sd) ** 2 - np.log(sd) - 0.5 * LOG_2PI).sum(axis=-1)

    def log_prior(self, z, theta):
        return self.unit_log_prior(z, theta).sum(axis=-1)

    def grad_log_prior(self, z, theta):
        theta = np.asarray(theta, dtype=float)
        zz = self._unpack(z)
        g = -(zz - theta[_MU_INDEX]) / theta[_SD_INDEX] ** 2
        return g.reshape(np.shape(z))

    def unit_log_likelihood(self, z, theta):
        sigma = theta[6]
        h, _ = self._curve(z, with_grad=False)
        resid = np.where(self.mask, self.conc - h, 0.0)
        n_i = self.mask.sum(axis=1)
        return -0.5 * (resid ** 2).sum(axis=-1) / sigma ** 2 - n_i * (np.log(sigma) + 0.5 * LOG_2PI)

    def log_likelihood(self, z, theta):
        return self.unit_log_likelihood(z, theta).sum(axis=-1)

    def grad_log_likelihood(self, z, theta):
        sigma = theta[6]
        h, dh = self._curve(z)
        resid = np.where(self.mask, self.conc - h, 0.0)
        g = (resid[..., None] * dh).sum(axis=-2) / sigma ** 2
        return g.reshape(np.shape(z))

    def sample_prior(self, theta, rng, size=None):
        theta = np.asarray(theta, dtype=float)
        shape = (self.n_patients, 3) if size is None else (size, self.n_patients, 3)
        zz = theta[_MU_INDEX] + theta[_SD_INDEX] * rng.standard_normal(shape)
        return zz.reshape(shape[:-2] + (self.latent_dim,))

    def initial_latent(self, rng):
        # Patients start at the population mean of the default starting point
        return np.tile(np.array([0.0, -1.0, 0.0]), self.n_patients)

    # -- exponential family ----------------------------------------------

    def suff_stats(self, z):
        zz = self._unpack(z)
        h, _ = self._curve(z, with_grad=False)
        rss = (np.where(self.mask, self.conc - h, 0.0) ** 2).sum(axis=(-2, -1))
        s1 = zz.sum(axis=-2)
        s2 = (zz ** 2).sum(axis=-2)
        # Layout: (Σ log V, Σ log ka, Σ log Cl, Σ log V², Σ log ka², Σ log Cl², RSS)
        return np.concatenate([s1, s2, np.asarray(rss)[..., None]], axis=-1)

    def _moments(self, s):
        n = self.n_patients
        mu = s[0:3] / n
        var = s[3:6] / n - mu ** 2
        res_var = s[6] / self.n_obs
        return mu, var, res_var

    def m_step(self, s):
        mu, var, res_var = self._moments(np.asarray(s, dtype=float))
        sd = np.sqrt(np.maximum(var, VAR_FLOOR))
        theta = np.empty(7)
        theta[_MU_INDEX] = mu
        theta[_SD_INDEX] = sd
        theta[6] = np.sqrt(max(res_var, VAR_FLOOR))
        return theta

    def is_clamped(self, s):
        _, var, res_var = self._moments(np.asarray(s, dtype=float))
        return bool(np.any(var < VAR_FLOOR) or res_var < VAR_FLOOR)

    def stats_from_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = self.n_patients
        mu = theta[_MU_INDEX]
        sd = theta[_SD_INDEX]
        return np.concatenate([n * mu, n * (sd ** 2 + mu ** 2), [self.n_obs * theta[6] ** 2]])

    def objective(self, s, theta):
        theta = np.asarray(theta, dtype=float)
        n = self.n_patients
        mu = theta[_MU_INDEX]
        sd = theta[_SD_INDEX]
        prior = -(s[3:6] - 2 * mu * s[0:3] + n * mu ** 2) / (2 * sd ** 2) - n * np.log(sd)
        return float(prior.sum() - s[6] / (2 * theta[6] ** 2) - self.n_obs * np.log(theta[6]))

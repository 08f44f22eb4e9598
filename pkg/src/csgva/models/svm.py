"""Stochastic volatility state space model (noncentered parametrization).

Mean-corrected returns y_i are zero-mean Gaussian with log variance
sigma * b_i + kappa, and the latent states b_i follow a stationary AR(1)
chain with unit innovation variance and persistence phi.  The constrained
parameters are mapped to the real line with alpha = log(exp(sigma) - 1)
(inverse softplus) and psi = logit(phi).  Globals are theta_g = (alpha,
kappa, psi); locals are the states, first-order Markov, so the conditional
precision is tridiagonal in blocks of size 1 (bandwidth 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from ..exceptions import DataError, NonFiniteParameterError
from .base import ModelDims

__all__ = ["SvmData", "SvmModel", "mean_correct", "natural_params", "unconstrained_params"]


def _softplus(x):
    return np.logaddexp(0.0, x)


def natural_params(theta_g):
    """Map (alpha, kappa, psi) to (sigma, kappa, phi)."""
    alpha, kappa, psi = theta_g
    return float(_softplus(alpha)), float(kappa), float(expit(psi))


def unconstrained_params(sigma, kappa, phi):
    """Inverse of :func:`natural_params` on sigma > 0, 0 < phi < 1."""
    if sigma <= 0 or not 0 < phi < 1:
        raise ValueError("need sigma > 0 and phi in (0, 1)")
    return float(np.log(np.expm1(sigma))), float(kappa), float(logit(phi))


def mean_correct(rates: np.ndarray) -> np.ndarray:
    """Mean-corrected percentage log returns of a positive rate series."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1 or rates.shape[0] < 2:
        raise DataError("need a 1-d series of at least two rates")
    if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
        raise DataError("rates must be positive and finite")
    lr = np.diff(np.log(rates))
    return 100.0 * (lr - lr.mean())


@dataclass
class SvmData:
    """Return series plus the prior variances of the transformed globals."""

    y: np.ndarray
    prior_var_alpha: float = 10.0
    prior_var_kappa: float = 10.0
    prior_var_psi: float = 10.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim != 1:
            raise DataError("y must be a 1-d series")
        if not np.all(np.isfinite(self.y)):
            raise DataError("y must be finite")


class SvmModel:
    """Log-joint and gradient of the stochastic volatility model."""

    def __init__(self, data: SvmData):
        self.data = data
        self.n = data.y.shape[0]
        self._y2 = data.y ** 2
        self.dims = ModelDims(G=3, n=self.n, L=1, ell=1)

    def log_joint(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameterError("theta is not finite")
        alpha, kappa, psi = theta[:3]
        b = theta[3:]
        d = self.data
        sigma = float(_softplus(alpha))
        phi = float(expit(psi))

        e = self._y2 * np.exp(-sigma * b - kappa)
        ll = -0.5 * self.n * kappa - 0.5 * sigma * float(b.sum()) - 0.5 * float(e.sum())

        # stationary AR(1): 1 - phi^2 = expit(-psi) * (1 + phi), stable for all psi
        one_minus_phi2 = float(expit(-psi)) * (1.0 + phi)
        log_one_minus_phi2 = float(np.log1p(phi) - _softplus(psi))
        diff = b[1:] - phi * b[:-1]
        ar = (-0.5 * float(diff @ diff)
              - 0.5 * b[0] ** 2 * one_minus_phi2
              + 0.5 * log_one_minus_phi2)

        priors = (-0.5 * alpha ** 2 / d.prior_var_alpha
                  - 0.5 * kappa ** 2 / d.prior_var_kappa
                  - 0.5 * psi ** 2 / d.prior_var_psi)
        return ll + ar + priors

    def grad(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameterError("theta is not finite")
        alpha, kappa, psi = theta[:3]
        b = theta[3:]
        d = self.data
        sigma = float(_softplus(alpha))
        phi = float(expit(psi))

        e = self._y2 * np.exp(-sigma * b - kappa)
        # d sigma / d alpha = 1 - exp(-sigma)
        dsig = float(-np.expm1(-sigma))
        g_alpha = 0.5 * float(((b * e) - b).sum()) * dsig - alpha / d.prior_var_alpha
        g_kappa = 0.5 * (float(e.sum()) - self.n) - kappa / d.prior_var_kappa

        diff = b[1:] - phi * b[:-1]
        dphi = phi * float(expit(-psi))  # phi (1 - phi)
        inner = float(diff @ b[:-1]) + b[0] ** 2 * phi
        # (phi / (1 - phi^2)) * phi (1 - phi) simplifies to phi^2 / (1 + phi)
        g_psi = inner * dphi - phi ** 2 / (1.0 + phi) - psi / d.prior_var_psi

        one_minus_phi2 = float(expit(-psi)) * (1.0 + phi)
        g_b = 0.5 * sigma * (e - 1.0)
        if self.n > 1:
            g_b[:-1] += phi * diff
            g_b[1:] -= diff
        g_b[0] -= b[0] * one_minus_phi2

        return np.concatenate([[g_alpha, g_kappa, g_psi], g_b])

    @property
    def global_labels(self) -> list:
        return ["alpha", "kappa", "psi"]

    @property
    def latent_labels(self) -> list:
        return [f"b_{i + 1}" for i in range(self.n)]


def load_svm_csv(path, rate_col=None, response_col=None, apply_mean_correct=True,
                 prior_var_alpha=10.0, prior_var_kappa=10.0, prior_var_psi=10.0) -> SvmData:
    """Read an SVM series: either raw rates to mean-correct or ready responses."""
    import csv

    col = rate_col if rate_col is not None else response_col
    if col is None:
        raise DataError("either rate_col or response_col must be given")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if col not in header:
            raise DataError(f"{path}: column {col!r} not found")
        k = header.index(col)
        vals = []
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals.append(float(row[k]))
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{ln}: {exc}") from None
    series = np.asarray(vals, dtype=np.float64)
    if rate_col is not None and apply_mean_correct:
        y = mean_correct(series)
    else:
        y = series
    if y.shape[0] < 2:
        raise DataError(f"{path}: need at least two observations")
    return SvmData(y=y, prior_var_alpha=prior_var_alpha,
                   prior_var_kappa=prior_var_kappa, prior_var_psi=prior_var_psi)

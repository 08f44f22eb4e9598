"""Generalized linear mixed model in the centered parametrization.

Responses y_ij follow a one-parameter exponential family (Poisson with log
link or Bernoulli with logit link) with linear predictor built from fixed
effects beta and per-subject random effects.  The centered form absorbs the
random-effect means: btilde_i ~ N(C_i beta_rg1, Lambda) and

    eta_i = Z_i btilde_i + X_i^{g2} beta_g2,

where beta is split into the block matched by the random-effect design
(R), subject-specific global covariates (G1) and the remaining globals (G2).
Lambda^{-1} = W W^T with W lower triangular, parametrized by omega =
vech(W*) (log-transformed diagonal).  Globals are theta_g = (beta, omega);
locals are the btilde_i, conditionally independent across subjects, so the
conditional precision is block diagonal (bandwidth 0).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DataError, NonFiniteParameterError
from ..linalg import BandPattern
from .base import ModelDims

__all__ = ["GlmmData", "GlmmModel", "build_ci"]


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    # stable logistic without scipy.special to keep this module self-contained
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class GlmmData:
    """Longitudinal data plus the column partition of the fixed effects.

    ``X`` and ``Z`` carry leading columns of ones (intercept and random
    intercept); ``Z`` must equal ``X[:, r_cols]``.  ``g1_cols`` are global
    columns constant within each subject; ``g2_cols`` are the rest.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    subject: np.ndarray
    family: str
    r_cols: np.ndarray
    g1_cols: np.ndarray
    g2_cols: np.ndarray
    prior_var_beta: float = 100.0
    prior_var_omega: float = 100.0
    colnames: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        self.subject = np.asarray(self.subject, dtype=np.intp)
        self.r_cols = np.asarray(self.r_cols, dtype=np.intp)
        self.g1_cols = np.asarray(self.g1_cols, dtype=np.intp)
        self.g2_cols = np.asarray(self.g2_cols, dtype=np.intp)
        if self.family not in ("poisson", "bernoulli"):
            raise DataError(f"unknown family {self.family!r}")
        if not self.colnames:
            self.colnames = [f"x{j}" for j in range(self.X.shape[1])]


def build_ci(xg1_row: np.ndarray, L: int) -> np.ndarray:
    """Design of the random-effect mean for one subject: [I_L | (x^T; 0)].

    The subject-specific covariate row shifts only the first (intercept)
    random-effect dimension; the remaining L-1 rows carry zeros beside the
    identity block.
    """
    xg1_row = np.atleast_1d(np.asarray(xg1_row, dtype=np.float64))
    g1 = xg1_row.shape[0]
    ci = np.zeros((L, L + g1))
    ci[:, :L] = np.eye(L)
    if g1:
        ci[0, L:] = xg1_row
    return ci


class GlmmModel:
    """Log-joint and gradient of the centered GLMM, vectorized over subjects."""

    def __init__(self, data: GlmmData, n_subjects: int | None = None):
        self.data = data
        N = data.y.shape[0]
        if data.X.shape[0] != N or data.Z.shape[0] != N or data.subject.shape[0] != N:
            raise DataError("X, Z, subject and y must have the same number of rows")
        self.p = data.X.shape[1]
        self.L = data.Z.shape[1]
        if N > 0:
            if not np.all(data.X[:, 0] == 1.0) or not np.all(data.Z[:, 0] == 1.0):
                raise DataError("first column of X and Z must be ones")
            if not np.array_equal(data.X[:, data.r_cols], data.Z):
                raise DataError("Z must equal the R-partition columns of X")
        parts = np.concatenate([data.r_cols, data.g1_cols, data.g2_cols])
        if sorted(parts.tolist()) != list(range(self.p)):
            raise DataError("column partition must cover every X column exactly once")
        if data.r_cols.shape[0] != self.L:
            raise DataError("R partition size must equal the random-effect dimension")
        if data.family == "poisson" and (np.any(data.y < 0) or np.any(data.y != np.floor(data.y))):
            raise DataError("poisson responses must be nonnegative integers")
        if data.family == "bernoulli" and not np.all(np.isin(data.y, (0.0, 1.0))):
            raise DataError("bernoulli responses must be 0/1")

        order = np.argsort(data.subject, kind="stable")
        self._y = data.y[order]
        self._X = data.X[order]
        self._Z = data.Z[order]
        subj = data.subject[order]
        if N > 0:
            self.n = int(subj.max()) + 1
            if np.unique(subj).shape[0] != self.n:
                raise DataError("subject codes must be contiguous 0..n-1")
            self._bounds = np.searchsorted(subj, np.arange(self.n))
        else:
            if n_subjects is None:
                raise DataError("n_subjects is required when there are no data rows")
            self.n = int(n_subjects)
            self._bounds = None
        if n_subjects is not None and N > 0 and n_subjects != self.n:
            raise DataError("n_subjects disagrees with the subject column")
        self._subj = subj

        self._XG2 = self._X[:, data.g2_cols]
        # subject-level values of the subject-specific covariates
        if N > 0:
            first_rows = self._bounds
            xg1 = self._X[np.ix_(first_rows, data.g1_cols)]
            if not np.array_equal(self._X[:, data.g1_cols], xg1[subj]):
                raise DataError("subject-specific columns must be constant within subject")
            self._xg1 = xg1
        else:
            self._xg1 = np.zeros((self.n, data.g1_cols.shape[0]))
        self.g1 = data.g1_cols.shape[0]
        self.g2 = data.g2_cols.shape[0]

        self._w_pattern = BandPattern.full_lower(self.L)
        self._TL = self._w_pattern.size
        self.dims = ModelDims(G=self.p + self._TL, n=self.n, L=self.L, ell=0)

    # ---- theta layout: [beta (user order), omega, btilde_1.., btilde_n] ----

    def _split(self, theta):
        p, TL = self.p, self._TL
        beta = theta[:p]
        omega = theta[p:p + TL]
        bt = theta[p + TL:].reshape(self.n, self.L)
        return beta, omega, bt

    def _w_matrix(self, omega):
        pat = self._w_pattern
        W = np.zeros((self.L, self.L))
        W[pat.rows, pat.cols] = omega
        di = np.arange(self.L)
        W[di, di] = np.exp(W[di, di])
        return W

    def _btilde_mean(self, beta):
        """Rows C_i beta_rg1 for all subjects at once."""
        beta_r = beta[self.data.r_cols]
        beta_g1 = beta[self.data.g1_cols]
        mean = np.tile(beta_r, (self.n, 1))
        if self.g1:
            mean[:, 0] += self._xg1 @ beta_g1
        return mean

    def _eta(self, beta, bt):
        eta = np.einsum("nj,nj->n", self._Z, bt[self._subj])
        if self.g2:
            eta = eta + self._XG2 @ beta[self.data.g2_cols]
        return eta

    def _h(self, eta):
        if self.data.family == "poisson":
            return np.exp(eta)
        return _softplus(eta)

    def _h_prime(self, eta):
        if self.data.family == "poisson":
            return np.exp(eta)
        return _sigmoid(eta)

    def log_joint(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameterError("theta is not finite")
        beta, omega, bt = self._split(theta)
        W = self._w_matrix(omega)
        E = bt - self._btilde_mean(beta)
        quad = -0.5 * float(np.sum((E @ W) ** 2))
        if self._y.shape[0]:
            eta = self._eta(beta, bt)
            ll = float(self._y @ eta - np.sum(self._h(eta)))
        else:
            ll = 0.0
        logdet = self.n * float(np.sum(omega[self._w_pattern.diag_idx]))
        priors = (-0.5 * float(beta @ beta) / self.data.prior_var_beta
                  - 0.5 * float(omega @ omega) / self.data.prior_var_omega)
        return ll + quad + logdet + priors

    def grad(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteParameterError("theta is not finite")
        beta, omega, bt = self._split(theta)
        W = self._w_matrix(omega)
        WWt = W @ W.T
        E = bt - self._btilde_mean(beta)
        V = E @ WWt

        if self._y.shape[0]:
            eta = self._eta(beta, bt)
            resid = self._y - self._h_prime(eta)
            g_beta_g2 = self._XG2.T @ resid if self.g2 else np.zeros(0)
            ZR = self._Z * resid[:, None]
            g_bt_like = np.add.reduceat(ZR, self._bounds, axis=0)
        else:
            g_beta_g2 = np.zeros(self.g2)
            g_bt_like = np.zeros((self.n, self.L))

        g_beta_r = V.sum(axis=0)
        g_beta_g1 = self._xg1.T @ V[:, 0] if self.g1 else np.zeros(0)

        g_beta = np.empty(self.p)
        g_beta[self.data.r_cols] = g_beta_r
        g_beta[self.data.g1_cols] = g_beta_g1
        g_beta[self.data.g2_cols] = g_beta_g2
        g_beta -= beta / self.data.prior_var_beta

        pat = self._w_pattern
        M = (E.T @ E) @ W
        vech_m = M[pat.rows, pat.cols]
        vech_m[pat.diag_idx] *= np.diag(W)
        g_omega = -vech_m + self.n * pat.unit_diag - omega / self.data.prior_var_omega

        g_bt = g_bt_like - V
        return np.concatenate([g_beta, g_omega, g_bt.ravel()])

    @property
    def global_labels(self) -> list:
        betas = [f"beta_{name}" for name in self.data.colnames]
        omegas = [f"omega_{k + 1}" for k in range(self._TL)]
        return betas + omegas

    @property
    def latent_labels(self) -> list:
        if self.L == 1:
            return [f"btilde_{i + 1}" for i in range(self.n)]
        return [f"btilde_{i + 1}_{l + 1}" for i in range(self.n) for l in range(self.L)]


def load_glmm_csv(path, response_col, covariate_cols, random_cols,
                  subject_specific_cols, family, subject_col="subject",
                  prior_var_beta=100.0, prior_var_omega=100.0) -> GlmmData:
    """Read a longitudinal CSV (header row, one observation per line).

    The design gets a leading intercept column; ``random_cols`` name the
    covariates with random slopes (the random intercept is implicit) and
    ``subject_specific_cols`` the globals constant within subject.  Subjects
    are coded in order of first appearance.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        idx = {name: k for k, name in enumerate(header)}
        for name in [subject_col, response_col, *covariate_cols]:
            if name not in idx:
                raise DataError(f"{path}: column {name!r} not found")
        rows = []
        subjects = []
        for ln, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                rows.append([float(row[idx[response_col]])]
                            + [float(row[idx[c]]) for c in covariate_cols])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{ln}: {exc}") from None
            subjects.append(row[idx[subject_col]].strip())
    if not rows:
        raise DataError(f"{path}: no data rows")

    arr = np.asarray(rows, dtype=np.float64)
    y = arr[:, 0]
    covs = arr[:, 1:]
    codes = {}
    subj = np.asarray([codes.setdefault(s, len(codes)) for s in subjects], dtype=np.intp)

    colnames = ["intercept", *covariate_cols]
    X = np.column_stack([np.ones(len(y)), covs])
    bad = set(random_cols) & set(subject_specific_cols)
    if bad:
        raise DataError(f"columns {sorted(bad)} cannot be both random and subject-specific")
    col_pos = {name: k for k, name in enumerate(colnames)}
    for name in [*random_cols, *subject_specific_cols]:
        if name not in col_pos:
            raise DataError(f"column {name!r} is not among the covariates")
    r_cols = np.asarray([0] + [col_pos[c] for c in random_cols], dtype=np.intp)
    g1_cols = np.asarray([col_pos[c] for c in subject_specific_cols], dtype=np.intp)
    g2_cols = np.asarray(
        [k for k in range(len(colnames)) if k not in set(r_cols) | set(g1_cols)],
        dtype=np.intp,
    )
    Z = X[:, r_cols]
    return GlmmData(y=y, X=X, Z=Z, subject=subj, family=family,
                    r_cols=r_cols, g1_cols=g1_cols, g2_cols=g2_cols,
                    prior_var_beta=prior_var_beta, prior_var_omega=prior_var_omega,
                    colnames=colnames)

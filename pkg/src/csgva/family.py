"""The conditionally structured Gaussian variational family.

The approximation factors as q(theta_g) * q(theta_l | theta_g), both Gaussian
in terms of Cholesky factors of the precision: theta_g ~ N(mu1, (C1 C1^T)^-1)
and, given theta_g, theta_l ~ N(mu2, (C2 C2^T)^-1) with

    mu2        = d + C2^{-T} D (mu1 - theta_g),
    vech(C2*)  = f + F theta_g        (on the stored band pattern only).

The joint density is Gaussian iff F == 0; that special case is tracked by the
``gaussian_mode`` flag so the plain Gaussian approximation shares every code
path with F frozen at zero.

All parameter blocks live in one flat vector so the optimizer can treat the
whole state elementwise; gradients come back as flat vectors with the same
layout.  None of the Jacobian algebra materializes a Jacobian matrix: each
block is evaluated with at most two triangular solves plus pattern-restricted
outer products.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteParameterError
from .linalg import (
    BandPattern,
    TriFactor,
    dstar_scale,
    factor_to_star,
    pattern_outer_vech,
    star_to_factor,
)

__all__ = [
    "ParamLayout",
    "VariationalParams",
    "Draw",
    "conditional_params",
    "reparam",
    "draw_from_theta",
    "inverse_reparam",
    "log_density",
    "grad_theta_log_density",
    "apply_jacobian",
    "score_lambda",
    "from_gva",
]

LOG_2PI = math.log(2.0 * math.pi)


class ParamLayout:
    """Block offsets of the flat parameter vector.

    Order: mu1 (G), vech(C1*) (G(G+1)/2), d (nL), D (nL x G, row-major),
    f (P), F (P x G, row-major).
    """

    def __init__(self, G: int, pattern: BandPattern):
        if G < 1:
            raise ValueError(f"global dimension must be positive, got {G}")
        self.G = G
        self.pattern = pattern
        self.c1_pattern = BandPattern.full_lower(G)
        nL, P, T1 = pattern.dim, pattern.size, self.c1_pattern.size
        sizes = [G, T1, nL, nL * G, P, P * G]
        bounds = np.cumsum([0] + sizes)
        (self.mu1_slice, self.c1star_slice, self.d_slice,
         self.D_slice, self.f_slice, self.F_slice) = (
            slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])
        )
        self.size = int(bounds[-1])

    @property
    def nL(self) -> int:
        return self.pattern.dim

    def mu1(self, vec):
        return vec[self.mu1_slice]

    def c1star(self, vec):
        return vec[self.c1star_slice]

    def d(self, vec):
        return vec[self.d_slice]

    def D(self, vec):
        return vec[self.D_slice].reshape(self.nL, self.G)

    def f(self, vec):
        return vec[self.f_slice]

    def F(self, vec):
        return vec[self.F_slice].reshape(self.pattern.size, self.G)


class VariationalParams:
    """Full variational state: a flat vector plus its layout.

    ``gaussian_mode`` marks the jointly Gaussian special case: F is kept at
    zero and never updated, while f still parametrizes the (now constant)
    conditional factor.
    """

    __slots__ = ("layout", "data", "gaussian_mode")

    def __init__(self, layout: ParamLayout, data: np.ndarray, gaussian_mode: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (layout.size,):
            raise ValueError(f"expected flat vector of length {layout.size}, got {data.shape}")
        self.layout = layout
        self.data = data
        self.gaussian_mode = bool(gaussian_mode)

    @classmethod
    def zeros(cls, G: int, pattern: BandPattern, gaussian_mode: bool = False):
        layout = ParamLayout(G, pattern)
        return cls(layout, np.zeros(layout.size), gaussian_mode)

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.layout, self.data.copy(), self.gaussian_mode)

    # block views (writable, share memory with .data)
    @property
    def mu1(self):
        return self.layout.mu1(self.data)

    @property
    def c1star(self):
        return self.layout.c1star(self.data)

    @property
    def d(self):
        return self.layout.d(self.data)

    @property
    def D(self):
        return self.layout.D(self.data)

    @property
    def f(self):
        return self.layout.f(self.data)

    @property
    def F(self):
        return self.layout.F(self.data)

    def c1_factor(self) -> TriFactor:
        return star_to_factor(self.layout.c1_pattern, self.c1star)

    def to_dict(self) -> dict:
        pat = self.layout.pattern
        return {
            "mu1": self.mu1.tolist(),
            "c1star_vech": self.c1star.tolist(),
            "d": self.d.tolist(),
            "D_rowmajor": self.D.ravel().tolist(),
            "f_pattern": self.f.tolist(),
            "F_rowmajor": self.F.ravel().tolist(),
            "pattern": {"n": pat.n, "L": pat.L, "ell": pat.ell, "G": self.layout.G},
            "gaussian_mode": self.gaussian_mode,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "VariationalParams":
        pat = obj["pattern"]
        layout = ParamLayout(int(pat["G"]), BandPattern.banded(int(pat["n"]), int(pat["L"]), int(pat["ell"])))
        lam = cls(layout, np.zeros(layout.size), bool(obj["gaussian_mode"]))
        lam.mu1[:] = obj["mu1"]
        lam.c1star[:] = obj["c1star_vech"]
        lam.d[:] = obj["d"]
        lam.D[:, :] = np.asarray(obj["D_rowmajor"]).reshape(layout.nL, layout.G)
        lam.f[:] = obj["f_pattern"]
        lam.F[:, :] = np.asarray(obj["F_rowmajor"]).reshape(layout.pattern.size, layout.G)
        return lam

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "VariationalParams":
        return cls.from_dict(json.loads(text))


@dataclass
class Draw:
    """One reparametrized sample with the factors every gradient term reuses."""

    s1: np.ndarray
    s2: np.ndarray
    theta_g: np.ndarray
    theta_l: np.ndarray
    c1: TriFactor
    c2: TriFactor
    mu2: np.ndarray

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.theta_g, self.theta_l])


def conditional_params(lam: VariationalParams, theta_g: np.ndarray, s1=None):
    """Conditional factor and mean of theta_l given theta_g.

    Returns (mu2, C2).  ``s1`` is accepted for call-site symmetry with the
    reparametrization; the mean only needs theta_g - mu1, which already equals
    C1^{-T} s1.
    """
    star = lam.f + lam.F @ theta_g
    if not np.all(np.isfinite(star)):
        raise NonFiniteParameterError("conditional factor entries are not finite")
    c2 = star_to_factor(lam.layout.pattern, star)
    w = lam.D @ (theta_g - lam.mu1)
    mu2 = lam.d - c2.solve_t(w)
    if not np.all(np.isfinite(mu2)):
        raise NonFiniteParameterError("conditional mean is not finite")
    return mu2, c2


def reparam(lam: VariationalParams, s: np.ndarray) -> Draw:
    """Transform a standard normal draw s = (s1, s2) into theta = (theta_g, theta_l)."""
    G = lam.layout.G
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (G + lam.layout.nL,):
        raise ValueError(f"expected draw of length {G + lam.layout.nL}, got {s.shape}")
    s1, s2 = s[:G], s[G:]
    c1 = lam.c1_factor()
    theta_g = lam.mu1 + c1.solve_t(s1)
    mu2, c2 = conditional_params(lam, theta_g, s1)
    w = lam.D @ (theta_g - lam.mu1)
    theta_l = lam.d + c2.solve_t(s2 - w)
    return Draw(s1.copy(), s2.copy(), theta_g, theta_l, c1, c2, mu2)


def draw_from_theta(lam: VariationalParams, theta: np.ndarray) -> Draw:
    """Invert the reparametrization at a given theta, returning the full draw."""
    G = lam.layout.G
    theta = np.asarray(theta, dtype=np.float64)
    theta_g, theta_l = theta[:G].copy(), theta[G:].copy()
    c1 = lam.c1_factor()
    s1 = c1.matvec_t(theta_g - lam.mu1)
    mu2, c2 = conditional_params(lam, theta_g, s1)
    s2 = c2.matvec_t(theta_l - mu2)
    return Draw(s1, s2, theta_g, theta_l, c1, c2, mu2)


def inverse_reparam(lam: VariationalParams, theta: np.ndarray) -> np.ndarray:
    draw = draw_from_theta(lam, theta)
    return np.concatenate([draw.s1, draw.s2])


def log_density(lam: VariationalParams, draw: Draw) -> float:
    """log q(theta_g) + log q(theta_l | theta_g) at the draw's theta."""
    dim = lam.layout.G + lam.layout.nL
    quad = float(draw.s1 @ draw.s1 + draw.s2 @ draw.s2)
    return -0.5 * dim * LOG_2PI + draw.c1.log_det() + draw.c2.log_det() - 0.5 * quad


def _f_score(lam: VariationalParams, draw: Draw) -> np.ndarray:
    """vech(I) - D2* vech{(theta_l - d) s2^T}, the f-block of the direct score."""
    pat = lam.layout.pattern
    t = pattern_outer_vech(draw.theta_l - lam.d, draw.s2, pat)
    return pat.unit_diag - dstar_scale(draw.c2, t)


def grad_theta_log_density(lam: VariationalParams, draw: Draw) -> np.ndarray:
    """Gradient of log q with respect to theta, both blocks stacked."""
    g_l = -draw.c2.matvec(draw.s2)
    g_g = lam.F.T @ _f_score(lam, draw) - draw.c1.matvec(draw.s1) - lam.D.T @ draw.s2
    return np.concatenate([g_g, g_l])


def apply_jacobian(lam: VariationalParams, draw: Draw, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """Action of the reparametrization Jacobian on a theta-space vector.

    Given (g1, g2) this returns the flat lambda-space vector whose blocks are
    the chain-rule images through theta = r_lambda(s) at the draw.  Matrix-free:
    two triangular solves (C2^{-1} g2 and C1^{-1} h) plus pattern-restricted
    outer products.
    """
    lay = lam.layout
    g1 = np.asarray(g1, dtype=np.float64)
    g2 = np.asarray(g2, dtype=np.float64)
    out = np.zeros(lay.size)

    u2 = draw.c2.solve(g2)
    f_blk = -dstar_scale(draw.c2, pattern_outer_vech(draw.theta_l - lam.d, u2, lay.pattern))
    mu1_blk = g1 + lam.F.T @ f_blk

    h = mu1_blk - lam.D.T @ u2
    w = draw.c1.solve(h)
    z = draw.theta_g - lam.mu1
    c1_blk = -dstar_scale(draw.c1, pattern_outer_vech(z, w, lay.c1_pattern))

    out[lay.mu1_slice] = mu1_blk
    out[lay.c1star_slice] = c1_blk
    out[lay.d_slice] = g2
    out[lay.D_slice] = -np.outer(u2, z).ravel()
    out[lay.f_slice] = f_blk
    out[lay.F_slice] = np.outer(f_blk, draw.theta_g).ravel()
    return out


def score_lambda(lam: VariationalParams, draw: Draw) -> np.ndarray:
    """Direct score: gradient of log q_lambda(theta) in lambda with theta held fixed."""
    lay = lam.layout
    z = draw.theta_g - lam.mu1
    out = np.zeros(lay.size)

    out[lay.mu1_slice] = draw.c1.matvec(draw.s1) + lam.D.T @ draw.s2
    c1_t = pattern_outer_vech(z, draw.s1, lay.c1_pattern)
    out[lay.c1star_slice] = lay.c1_pattern.unit_diag - dstar_scale(draw.c1, c1_t)
    out[lay.d_slice] = draw.c2.matvec(draw.s2)
    out[lay.D_slice] = -np.outer(draw.s2, z).ravel()
    f_blk = _f_score(lam, draw)
    out[lay.f_slice] = f_blk
    out[lay.F_slice] = np.outer(f_blk, draw.theta_g).ravel()
    return out


def from_gva(mu_g, mu_l, t_gg: TriFactor, t_gl, t_ll: TriFactor,
             pattern: BandPattern | None = None) -> VariationalParams:
    """Build the state equivalent to a jointly Gaussian fit.

    The Gaussian approximation with precision factor T (blocks T_LL, T_GL,
    T_GG, locations mu_l / mu_g) maps onto this family as mu1 = mu_g,
    d = mu_l, C1 = T_GG, C2 = T_LL, D = T_GL^T and F = 0.  The result has
    ``gaussian_mode`` off so a subsequent fit is free to move F.  If
    ``pattern`` is given, T_LL must live on exactly that pattern.
    """
    mu_g = np.asarray(mu_g, dtype=np.float64)
    mu_l = np.asarray(mu_l, dtype=np.float64)
    t_gl = np.asarray(t_gl, dtype=np.float64)
    G = mu_g.shape[0]
    if t_gg.dim != G:
        raise ValueError("T_GG dimension does not match mu_g")
    if pattern is not None and not t_ll.pattern.same_shape(pattern):
        raise ValueError("T_LL pattern does not match the requested pattern")
    pattern = t_ll.pattern
    if mu_l.shape != (pattern.dim,) or t_gl.shape != (G, pattern.dim):
        raise ValueError("T_LL pattern, mu_l and T_GL shapes are inconsistent")
    lam = VariationalParams.zeros(G, pattern)
    lam.mu1[:] = mu_g
    lam.c1star[:] = factor_to_star_on(t_gg, lam.layout.c1_pattern)
    lam.d[:] = mu_l
    lam.D[:, :] = t_gl.T
    lam.f[:] = factor_to_star(t_ll)
    return lam


def factor_to_star_on(factor: TriFactor, pattern: BandPattern) -> np.ndarray:
    """factor_to_star with a pattern-compatibility check."""
    if not factor.pattern.same_shape(pattern):
        raise ValueError("factor pattern does not match the expected pattern")
    return factor_to_star(factor)

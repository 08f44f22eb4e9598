"""Independent numerical oracles used by the test suite.

Deliberately dumb code paths: dense numpy linear algebra and plain loops,
sharing nothing with the pattern-based kernels they check, so agreement
between the two is evidence rather than tautology.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["FDSpec", "OracleError", "fd_gradient", "dense_gaussian_logpdf", "mc_mean_test"]


class OracleError(RuntimeError):
    """An oracle evaluation failed (e.g. a non-finite finite-difference probe)."""


@dataclass(frozen=True)
class FDSpec:
    """Central finite-difference settings and the tolerances they support."""

    h: float = 1e-5
    rtol: float = 1e-6
    atol: float = 1e-8

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("step must be positive")


def fd_gradient(f, x, spec: FDSpec = FDSpec()) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.shape[0])
    for j in range(x.shape[0]):
        xp = x.copy()
        xp[j] = x[j] + spec.h
        fp = f(xp)
        xp[j] = x[j] - spec.h
        fm = f(xp)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"non-finite probe at coordinate {j}")
        grad[j] = (fp - fm) / (2.0 * spec.h)
    return grad


def close_to(a, b, spec: FDSpec = FDSpec()) -> bool:
    """Relative comparison with the settings' absolute floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(np.abs(a - b) <= spec.atol + spec.rtol * np.abs(b)))


def dense_gaussian_logpdf(mean, T, x) -> float:
    """Log density of N(mean, (T T^T)^{-1}) with T a dense lower-triangular factor."""
    mean = np.asarray(mean, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = np.diag(T)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise OracleError("factor diagonal must be positive and finite")
    r = T.T @ (x - mean)
    dim = mean.shape[0]
    return float(-0.5 * dim * math.log(2.0 * math.pi) + np.sum(np.log(d)) - 0.5 * r @ r)


@dataclass
class MCMeanResult:
    mean: np.ndarray
    se: np.ndarray
    z: np.ndarray
    passed: bool


def mc_mean_test(sampler, dim: int, M: int, claimed_mean, z_max: float = 4.0) -> MCMeanResult:
    """Check a sampler's mean against a claim at ``z_max`` standard errors.

    ``sampler`` is a zero-argument callable returning one length-``dim``
    vector per call (deterministic given whatever rng it closes over).
    """
    if M < 1000:
        raise ValueError("need at least 1000 samples for a meaningful test")
    claimed = np.broadcast_to(np.asarray(claimed_mean, dtype=np.float64), (dim,))
    draws = np.empty((M, dim))
    for k in range(M):
        draws[k] = sampler()
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(M)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean - claimed) / se, np.where(mean == claimed, 0.0, np.inf))
    return MCMeanResult(mean, se, z, bool(np.all(np.abs(z) <= z_max)))

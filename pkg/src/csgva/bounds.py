"""Monte Carlo lower bounds and their lambda-gradient estimators.

One draw gives the usual evidence-lower-bound estimate and its path
gradient; K draws give the importance weighted bound (log of the mean
weight), the alpha-order bound family it embeds in, and the doubly
reparametrized gradient whose per-sample weights are the squared normalized
importance weights.

All weight arithmetic runs through a max-shifted log-sum-exp with the
log-weights sorted in descending order first, so estimates are invariant to
draw ordering and identical between serial and parallel evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import family

__all__ = [
    "WeightSet",
    "GradientEstimate",
    "importance_weights",
    "elbo_estimate",
    "path_gradient",
    "total_gradient",
    "iwlb_estimate",
    "renyi_bound",
    "dreg_gradient",
]


def _sorted_lse(log_w: np.ndarray) -> float:
    """Max-shifted log-sum-exp over descending-sorted values."""
    a = np.sort(np.asarray(log_w, dtype=np.float64))[::-1]
    m = a[0]
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def _log_mean_exp(log_w: np.ndarray) -> float:
    a = np.sort(np.asarray(log_w, dtype=np.float64))[::-1]
    m = a[0]
    if not np.isfinite(m):
        return float(m)
    # grouping keeps constant weights exact: m + (log K - log K) == m
    return float(m + (np.log(np.sum(np.exp(a - m))) - math.log(a.shape[0])))


@dataclass
class WeightSet:
    """Log importance weights log p(y, theta_k) - log q(theta_k) and their draws."""

    log_weights: np.ndarray
    draws: list

    @property
    def K(self) -> int:
        return self.log_weights.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        """Self-normalized weights, summing to one."""
        return np.exp(self.log_weights - _sorted_lse(self.log_weights))


@dataclass
class GradientEstimate:
    """Flat lambda gradient plus the bound estimate it came with."""

    grad: np.ndarray
    bound: float
    estimator: str


def _log_weight(lam, model, draw) -> float:
    return model.log_joint(draw.theta) - family.log_density(lam, draw)


def importance_weights(lam, model, samples: np.ndarray, map_fn=map) -> WeightSet:
    """Evaluate the K draws in ``samples`` (rows are standard normal vectors).

    ``map_fn`` may be an executor map; results are combined in draw order
    either way.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    draws = list(map_fn(lambda s: family.reparam(lam, s), samples))
    log_w = np.asarray([_log_weight(lam, model, d) for d in draws])
    return WeightSet(log_w, draws)


def elbo_estimate(lam, model, s: np.ndarray) -> float:
    """One-sample unbiased estimate of the evidence lower bound."""
    return _log_weight(lam, model, family.reparam(lam, s))


def path_gradient(lam, model, s: np.ndarray) -> GradientEstimate:
    """Reparametrization gradient with the direct score term dropped.

    The dropped term has zero expectation, and omitting it makes the
    estimate vanish identically when q matches the posterior.
    """
    draw = family.reparam(lam, s)
    g = model.grad(draw.theta) - family.grad_theta_log_density(lam, draw)
    G = lam.layout.G
    grad = family.apply_jacobian(lam, draw, g[:G], g[G:])
    return GradientEstimate(grad, _log_weight(lam, model, draw), "path")


def total_gradient(lam, model, s: np.ndarray) -> GradientEstimate:
    """Full derivative including the direct score (diagnostics and tests only)."""
    draw = family.reparam(lam, s)
    g = model.grad(draw.theta) - family.grad_theta_log_density(lam, draw)
    G = lam.layout.G
    grad = family.apply_jacobian(lam, draw, g[:G], g[G:]) - family.score_lambda(lam, draw)
    return GradientEstimate(grad, _log_weight(lam, model, draw), "total")


def iwlb_estimate(lam, model, samples: np.ndarray, map_fn=map) -> float:
    """log of the average importance weight over the K draws."""
    ws = importance_weights(lam, model, samples, map_fn=map_fn)
    return _log_mean_exp(ws.log_weights)


def renyi_bound(lam, model, samples: np.ndarray, alpha: float) -> float:
    """Monte Carlo alpha-order bound; alpha=0 is the importance weighted bound.

    alpha = 1 dispatches to the limit, the plain average of log-weights.
    """
    ws = importance_weights(lam, model, samples)
    if alpha == 1.0:
        return float(np.mean(np.sort(ws.log_weights)[::-1]))
    scale = 1.0 - alpha
    return _log_mean_exp(scale * ws.log_weights) / scale


def dreg_gradient(lam, model, samples: np.ndarray, map_fn=map) -> GradientEstimate:
    """Doubly reparametrized gradient of the importance weighted bound.

    Sum over draws of wtilde_k^2 times the path-gradient term of draw k,
    where wtilde are the normalized importance weights (the squared weights
    do not sum to one).  Unbiased for the bound's gradient; collapses to the
    path gradient at K=1.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    terms = list(map_fn(lambda s: _dreg_term(lam, model, s), samples))
    log_w = np.asarray([lw for lw, _ in terms])
    lse = _sorted_lse(log_w)
    wt = np.exp(log_w - lse)
    grad = np.zeros(lam.layout.size)
    for (_, jac), w in zip(terms, wt):
        grad += (w * w) * jac
    return GradientEstimate(grad, _log_mean_exp(log_w), "dreg")


def _dreg_term(lam, model, s):
    """Per-draw log-weight and Jacobian-applied gradient (parallelizable)."""
    draw = family.reparam(lam, s)
    g = model.grad(draw.theta) - family.grad_theta_log_density(lam, draw)
    G = lam.layout.G
    jac = family.apply_jacobian(lam, draw, g[:G], g[G:])
    return _log_weight(lam, model, draw), jac

"""Ancestral sampling from a fitted approximation and summary statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .family import VariationalParams, reparam
from .optimizer import RNG_POSTERIOR

__all__ = ["PosteriorSummary", "sample_posterior"]


@dataclass
class PosteriorSummary:
    """Per-coordinate means and standard deviations of posterior draws."""

    global_labels: list
    global_mean: np.ndarray
    global_sd: np.ndarray
    latent_labels: list
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    samples: np.ndarray | None = None


def sample_posterior(lam: VariationalParams, model, count: int,
                     seed: int = 0, keep_samples: bool = False) -> PosteriorSummary:
    """Draw ``count`` samples by generating theta_g first, then theta_l given it.

    Uses a dedicated random substream so sampling never perturbs training or
    bound-estimation randomness.
    """
    rng = np.random.default_rng([seed, RNG_POSTERIOR])
    G, nL = lam.layout.G, lam.layout.nL
    out = np.empty((count, G + nL))
    for k in range(count):
        out[k] = reparam(lam, rng.standard_normal(G + nL)).theta
    mean = out.mean(axis=0)
    sd = out.std(axis=0, ddof=1)
    return PosteriorSummary(
        global_labels=list(model.global_labels),
        global_mean=mean[:G],
        global_sd=sd[:G],
        latent_labels=list(model.latent_labels),
        latent_mean=mean[G:],
        latent_sd=sd[G:],
        samples=out if keep_samples else None,
    )

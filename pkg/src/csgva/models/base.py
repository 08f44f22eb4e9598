"""Common model interface: dimensions plus log-joint and gradient evaluators.

A model exposes the unnormalized log posterior log p(y, theta) of a
global/local hierarchy, with theta = (theta_g, theta_l) stacked as one
vector.  Additive constants independent of theta are dropped everywhere, so
all reported bounds are constant-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ..linalg import BandPattern


@dataclass(frozen=True)
class ModelDims:
    """Shape of the hierarchy: G globals, n local blocks of size L, bandwidth ell."""

    G: int
    n: int
    L: int
    ell: int

    @property
    def nL(self) -> int:
        return self.n * self.L

    @property
    def dim(self) -> int:
        return self.G + self.nL

    def pattern(self) -> BandPattern:
        return BandPattern.banded(self.n, self.L, self.ell)


class Model(Protocol):
    dims: ModelDims

    def log_joint(self, theta: np.ndarray) -> float: ...

    def grad(self, theta: np.ndarray) -> np.ndarray: ...

    @property
    def global_labels(self) -> list[str]: ...

    @property
    def latent_labels(self) -> list[str]: ...

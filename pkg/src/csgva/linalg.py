"""Lower-triangular factors stored on an explicit block-band sparsity pattern.

Everything here works on the half-vectorized (vech) storage of a lower
triangular matrix: entries are kept column by column, diagonal downwards,
and only positions inside the block band are stored.  Solves and
matrix-vector products go through the LAPACK/BLAS banded triangular
kernels (``tbtrs`` / ``tbmv``), so no dense matrix is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dtbmv
from scipy.linalg.lapack import dtbtrs

from .exceptions import SingularFactorError

__all__ = [
    "BandPattern",
    "TriFactor",
    "star_to_factor",
    "factor_to_star",
    "dstar_scale",
    "pattern_outer_vech",
]


@dataclass(frozen=True)
class BandPattern:
    """Index map for the stored positions of a block-banded lower triangle.

    The matrix has ``n`` blocks of size ``L`` and block bandwidth ``ell``:
    position (i, j) is stored iff i >= j and the block row/column indices
    differ by at most ``ell``.  Storage order is vech order (column-major,
    diagonal downwards), which fixes the ordering of every pattern vector
    in the package.
    """

    n: int
    L: int
    ell: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)

    @classmethod
    def banded(cls, n: int, L: int, ell: int) -> "BandPattern":
        if n < 1 or L < 1:
            raise ValueError(f"block count and size must be positive, got n={n}, L={L}")
        if not 0 <= ell < n:
            raise ValueError(f"bandwidth must satisfy 0 <= ell < n, got ell={ell}, n={n}")
        dim = n * L
        rows, cols = [], []
        for j in range(dim):
            bot = min(dim - 1, (j // L + ell) * L + L - 1)
            for i in range(j, bot + 1):
                rows.append(i)
                cols.append(j)
        return cls(n, L, ell, np.asarray(rows, dtype=np.intp), np.asarray(cols, dtype=np.intp))

    @classmethod
    def full_lower(cls, dim: int) -> "BandPattern":
        """Dense lower triangle of order ``dim`` (n=dim blocks of size 1)."""
        return cls.banded(dim, 1, dim - 1)

    @property
    def dim(self) -> int:
        return self.n * self.L

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def bandwidth(self) -> int:
        """Scalar bandwidth enclosing the block band."""
        return (self.ell + 1) * self.L - 1

    @property
    def diag_idx(self) -> np.ndarray:
        """Storage offsets of the diagonal positions."""
        return self._diag_idx()

    def _diag_idx(self):
        # cached lazily on the instance despite frozen=True
        cached = self.__dict__.get("_diag_cache")
        if cached is None:
            cached = np.flatnonzero(self.rows == self.cols)
            self.__dict__["_diag_cache"] = cached
        return cached

    @property
    def unit_diag(self) -> np.ndarray:
        """Pattern vector equal to vech(I) restricted to the pattern (read-only)."""
        cached = self.__dict__.get("_unit_diag_cache")
        if cached is None:
            cached = np.zeros(self.size)
            cached[self.diag_idx] = 1.0
            cached.setflags(write=False)
            self.__dict__["_unit_diag_cache"] = cached
        return cached

    def offset(self, row: int, col: int) -> int:
        """Storage offset of position (row, col); raises if outside the pattern."""
        hits = np.flatnonzero((self.rows == row) & (self.cols == col))
        if hits.size == 0:
            raise ValueError(f"position ({row}, {col}) is outside the pattern")
        return int(hits[0])

    def same_shape(self, other: "BandPattern") -> bool:
        return (self.n, self.L, self.ell) == (other.n, other.L, other.ell)


class TriFactor:
    """Lower-triangular factor with positive diagonal on a band pattern.

    Wraps the pattern entries together with the LAPACK band storage
    ``ab[i - j, j] = T[i, j]`` used by the banded solve/multiply kernels.
    Immutable once built; safe to share across threads.
    """

    __slots__ = ("pattern", "entries", "diag", "_ab", "_diag_ok")

    def __init__(self, pattern: BandPattern, entries: np.ndarray):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.shape != (pattern.size,):
            raise ValueError(
                f"expected {pattern.size} pattern entries, got shape {entries.shape}"
            )
        self.pattern = pattern
        self.entries = entries
        self.diag = entries[pattern.diag_idx]
        ab = np.zeros((pattern.bandwidth + 1, pattern.dim), order="F")
        ab[pattern.rows - pattern.cols, pattern.cols] = entries
        self._ab = ab
        # cheap flag checked at every solve; construction itself never raises
        self._diag_ok = bool(np.all(np.isfinite(self.diag)) and not np.any(self.diag <= 0.0))

    @property
    def dim(self) -> int:
        return self.pattern.dim

    def _check_diag(self):
        if not self._diag_ok:
            raise SingularFactorError("factor diagonal is nonpositive or non-finite")

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Forward substitution for T x = b."""
        return self._solve(b, trans="N")

    def solve_t(self, b: np.ndarray) -> np.ndarray:
        """Back substitution for T^T x = b."""
        return self._solve(b, trans="T")

    def _solve(self, b, trans):
        self._check_diag()
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.dim,):
            raise ValueError(f"rhs length {b.shape} does not match dim {self.dim}")
        x, info = dtbtrs(self._ab, b[:, None], uplo="L", trans=trans)
        if info != 0:
            raise SingularFactorError(f"banded triangular solve failed (info={info})")
        return x[:, 0]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """T @ x."""
        return dtbmv(self.pattern.bandwidth, self._ab, np.asarray(x, dtype=np.float64),
                     lower=1, trans=0)

    def matvec_t(self, x: np.ndarray) -> np.ndarray:
        """T^T @ x."""
        return dtbmv(self.pattern.bandwidth, self._ab, np.asarray(x, dtype=np.float64),
                     lower=1, trans=1)

    def log_det(self) -> float:
        self._check_diag()
        return float(np.sum(np.log(self.diag)))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        out[self.pattern.rows, self.pattern.cols] = self.entries
        return out


def star_to_factor(pattern: BandPattern, star_entries: np.ndarray) -> TriFactor:
    """Map unconstrained entries to a factor by exponentiating the diagonal.

    Overflow to +inf is not an error here; it surfaces as a singular-factor
    error at the first solve, so transient extreme proposals can be rejected
    by the caller.
    """
    star_entries = np.asarray(star_entries, dtype=np.float64)
    if star_entries.shape != (pattern.size,):
        raise ValueError(
            f"expected {pattern.size} pattern entries, got shape {star_entries.shape}"
        )
    entries = star_entries.copy()
    di = pattern.diag_idx
    with np.errstate(over="ignore"):
        entries[di] = np.exp(entries[di])
    return TriFactor(pattern, entries)


def factor_to_star(factor: TriFactor) -> np.ndarray:
    """Inverse of :func:`star_to_factor` (log the diagonal)."""
    out = factor.entries.copy()
    di = factor.pattern.diag_idx
    out[di] = np.log(out[di])
    return out


def dstar_scale(factor: TriFactor, v: np.ndarray) -> np.ndarray:
    """Multiply the diagonal positions of a pattern vector by diag(T).

    This is the action of the diagonal matrix that converts derivatives with
    respect to the log-diagonal parametrization into derivatives with respect
    to the factor entries; off-diagonal positions are left unchanged.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (factor.pattern.size,):
        raise ValueError(f"pattern vector length {v.shape} does not match {factor.pattern.size}")
    out = v.copy()
    di = factor.pattern.diag_idx
    out[di] *= factor.diag
    return out


def pattern_outer_vech(u: np.ndarray, v: np.ndarray, pattern: BandPattern) -> np.ndarray:
    """Entries of the outer product u v^T at the pattern positions only."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != (pattern.dim,) or v.shape != (pattern.dim,):
        raise ValueError(
            f"vector lengths {u.shape}, {v.shape} do not match pattern dim {pattern.dim}"
        )
    return u[pattern.rows] * v[pattern.cols]

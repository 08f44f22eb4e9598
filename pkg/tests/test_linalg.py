import numpy as np
import pytest

from csgva.exceptions import SingularFactorError
from csgva.linalg import (
    BandPattern,
    TriFactor,
    dstar_scale,
    factor_to_star,
    pattern_outer_vech,
    star_to_factor,
)


def brute_force_pattern(n, L, ell):
    """Independent enumeration of the stored positions."""
    dim = n * L
    out = []
    for j in range(dim):
        for i in range(j, dim):
            if i // L - j // L <= ell:
                out.append((i, j))
    return sorted(out, key=lambda t: (t[1], t[0]))


def random_factor(pattern, rng, scale=0.5):
    return star_to_factor(pattern, rng.standard_normal(pattern.size) * scale)


class TestBandPattern:
    def test_tridiagonal_chain(self):
        # n=3 scalar blocks, bandwidth 1: main + first subdiagonal
        pat = BandPattern.banded(3, 1, 1)
        got = list(zip(pat.rows.tolist(), pat.cols.tolist()))
        assert got == [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2)]
        assert pat.size == 2 * 3 - 1

    def test_block_diagonal_size(self):
        pat = BandPattern.banded(2, 2, 0)
        assert pat.size == 2 * 2 * 3 // 2  # n L (L+1) / 2

    def test_single_scalar_block(self):
        pat = BandPattern.banded(1, 1, 0)
        assert list(zip(pat.rows, pat.cols)) == [(0, 0)]
        assert pat.size == 1

    @pytest.mark.parametrize("n", range(1, 7))
    @pytest.mark.parametrize("L", range(1, 4))
    @pytest.mark.parametrize("ell", range(0, 3))
    def test_matches_brute_force(self, n, L, ell):
        if ell >= n:
            pytest.skip("outside the valid range")
        pat = BandPattern.banded(n, L, ell)
        assert list(zip(pat.rows.tolist(), pat.cols.tolist())) == brute_force_pattern(n, L, ell)
        # closed-form count: diagonal-block triangles plus full off-diagonal blocks
        expect = n * L * (L + 1) // 2 + sum((n - k) * L * L for k in range(1, ell + 1))
        assert pat.size == expect

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            BandPattern.banded(3, 1, 3)
        with pytest.raises(ValueError):
            BandPattern.banded(0, 1, 0)
        with pytest.raises(ValueError):
            BandPattern.banded(2, 0, 0)

    def test_offset_lookup(self):
        pat = BandPattern.banded(3, 1, 1)
        assert pat.offset(1, 0) == 1
        with pytest.raises(ValueError):
            pat.offset(2, 0)  # outside the band

    def test_full_lower(self):
        pat = BandPattern.full_lower(4)
        assert pat.size == 10
        assert pat.dim == 4


class TestSolves:
    def test_identity(self):
        pat = BandPattern.full_lower(3)
        T = star_to_factor(pat, np.zeros(pat.size))
        b = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(T.solve(b), b)
        np.testing.assert_array_equal(T.solve_t(b), b)

    def test_two_by_two_hand_solve(self):
        # T = [[2, 0], [1, 1]] in vech order (2, 1, 1)
        pat = BandPattern.full_lower(2)
        T = TriFactor(pat, np.array([2.0, 1.0, 1.0]))
        x = T.solve(np.array([2.0, 3.0]))
        np.testing.assert_allclose(x, [1.0, 2.0])
        np.testing.assert_allclose(T.to_dense() @ x, [2.0, 3.0], atol=1e-15)

        xt = T.solve_t(np.array([1.0, 1.0]))
        np.testing.assert_allclose(T.to_dense().T @ xt - [1.0, 1.0], 0.0, atol=1e-15)

    def test_banded_residual(self, rng):
        pat = BandPattern.banded(5, 1, 1)
        T = random_factor(pat, rng)
        b = rng.standard_normal(5)
        x = T.solve(b)
        assert np.max(np.abs(T.to_dense() @ x - b)) < 1e-12

    @pytest.mark.parametrize("shape", [(6, 1, 1), (4, 2, 1), (3, 3, 2)])
    def test_matches_dense_solves(self, shape, rng):
        pat = BandPattern.banded(*shape)
        T = random_factor(pat, rng)
        dense = T.to_dense()
        b = rng.standard_normal(pat.dim)
        np.testing.assert_allclose(T.solve(b), np.linalg.solve(dense, b), rtol=1e-12)
        np.testing.assert_allclose(T.solve_t(b), np.linalg.solve(dense.T, b), rtol=1e-12)
        np.testing.assert_allclose(T.matvec(b), dense @ b, rtol=1e-12)
        np.testing.assert_allclose(T.matvec_t(b), dense.T @ b, rtol=1e-12)

    def test_residual_bound_random_wellconditioned(self, rng):
        for _ in range(20):
            pat = BandPattern.banded(int(rng.integers(2, 8)), int(rng.integers(1, 3)), 1)
            T = random_factor(pat, rng, scale=0.3)
            b = rng.standard_normal(pat.dim)
            x = T.solve(b)
            assert np.max(np.abs(T.to_dense() @ x - b)) <= 1e-10 * (1 + np.max(np.abs(b)))

    def test_singular_factor_rejected(self):
        pat = BandPattern.full_lower(2)
        bad = TriFactor(pat, np.array([0.0, 1.0, 1.0]))
        with pytest.raises(SingularFactorError):
            bad.solve(np.ones(2))
        neg = TriFactor(pat, np.array([-1.0, 1.0, 1.0]))
        with pytest.raises(SingularFactorError):
            neg.solve_t(np.ones(2))

    def test_overflowed_star_detected_at_solve(self):
        pat = BandPattern.full_lower(1)
        T = star_to_factor(pat, np.array([1e4]))  # exp overflows to inf
        assert np.isinf(T.diag[0])
        with pytest.raises(SingularFactorError):
            T.solve(np.ones(1))

    def test_rhs_length_checked(self):
        pat = BandPattern.full_lower(2)
        T = star_to_factor(pat, np.zeros(3))
        with pytest.raises(ValueError):
            T.solve(np.ones(3))


class TestStarMap:
    def test_zero_star_gives_identity(self):
        pat = BandPattern.full_lower(2)
        T = star_to_factor(pat, np.zeros(3))
        np.testing.assert_array_equal(T.to_dense(), np.eye(2))

    def test_definition(self):
        pat = BandPattern.full_lower(2)
        T = star_to_factor(pat, np.array([np.log(2.0), 3.0, np.log(5.0)]))
        np.testing.assert_allclose(T.entries, [2.0, 3.0, 5.0])

    def test_round_trip(self, rng):
        pat = BandPattern.banded(4, 2, 1)
        star = rng.standard_normal(pat.size)
        back = factor_to_star(star_to_factor(pat, star))
        np.testing.assert_allclose(back, star, atol=1e-15)

    def test_positive_diagonal_always(self, rng):
        for _ in range(10):
            pat = BandPattern.banded(3, 2, 1)
            T = star_to_factor(pat, rng.standard_normal(pat.size) * 3)
            assert np.all(T.diag > 0)


class TestDstarScale:
    def test_identity_factor_leaves_unchanged(self):
        pat = BandPattern.full_lower(3)
        T = star_to_factor(pat, np.zeros(pat.size))
        v = np.arange(1.0, pat.size + 1)
        np.testing.assert_array_equal(dstar_scale(T, v), v)

    def test_definition(self):
        pat = BandPattern.full_lower(2)
        T = TriFactor(pat, np.array([2.0, 3.0, 5.0]))
        np.testing.assert_allclose(dstar_scale(T, np.ones(3)), [2.0, 1.0, 5.0])

    @pytest.mark.parametrize("shape", [(4, 1, 1), (3, 2, 0), (5, 1, 2)])
    def test_inverse_transpose_identity(self, shape, rng):
        # scaling vech(T^{-T}) by the diagonal recovers vech(I) on the pattern
        pat = BandPattern.banded(*shape)
        T = random_factor(pat, rng)
        inv_t = np.linalg.inv(T.to_dense()).T
        v = inv_t[pat.rows, pat.cols]
        np.testing.assert_allclose(dstar_scale(T, v), pat.unit_diag, atol=1e-12)

    def test_length_checked(self):
        pat = BandPattern.full_lower(2)
        T = star_to_factor(pat, np.zeros(3))
        with pytest.raises(ValueError):
            dstar_scale(T, np.ones(4))


class TestPatternOuterVech:
    def test_unit_vectors(self):
        pat = BandPattern.full_lower(2)
        e1 = np.array([1.0, 0.0])
        np.testing.assert_array_equal(pattern_outer_vech(e1, e1, pat), [1.0, 0.0, 0.0])

    def test_matches_dense_outer(self, rng):
        pat = BandPattern.full_lower(5)
        u, v = rng.standard_normal(5), rng.standard_normal(5)
        dense = np.outer(u, v)
        np.testing.assert_array_equal(pattern_outer_vech(u, v, pat), dense[pat.rows, pat.cols])

    def test_banded_masking(self, rng):
        pat = BandPattern.banded(4, 1, 1)
        u, v = rng.standard_normal(4), rng.standard_normal(4)
        got = pattern_outer_vech(u, v, pat)
        assert got.shape == (pat.size,)
        dense = np.outer(u, v)
        np.testing.assert_array_equal(got, dense[pat.rows, pat.cols])

    def test_length_checked(self, rng):
        pat = BandPattern.full_lower(3)
        with pytest.raises(ValueError):
            pattern_outer_vech(np.ones(2), np.ones(3), pat)

import math

import numpy as np
import pytest

from csgva import bounds, family
from csgva.linalg import BandPattern
from csgva.models.base import ModelDims
from csgva.models.svm import SvmData, SvmModel
from toys import (
    MismatchedGaussianPosterior,
    QuadraticModel,
    StandardNormalPosterior,
    random_lambda,
)


def zero_lambda(G=1, n=1, L=1, ell=0, **kw):
    return family.VariationalParams.zeros(G, BandPattern.banded(n, L, ell), **kw)


class TestElbo:
    def test_constant_at_matching_posterior(self, rng):
        # target built to equal the lambda=0 density bit for bit
        dims = ModelDims(G=2, n=3, L=1, ell=1)
        model = StandardNormalPosterior(dims)
        lam = zero_lambda(2, 3, 1, 1)
        vals = [bounds.elbo_estimate(lam, model, rng.standard_normal(5)) for _ in range(50)]
        assert vals == [0.0] * 50

    def test_mean_matches_analytic_evidence_minus_kl(self, rng):
        # Gaussian target with variance v and known evidence:
        # E[elbo] = log c - KL(N(0,I) || N(0, v I))
        dims = ModelDims(G=1, n=1, L=1, ell=0)
        v, log_c = 0.25, 0.7
        model = MismatchedGaussianPosterior(dims, var=v, log_evidence=log_c)
        lam = zero_lambda()
        M = 100_000
        vals = np.array([bounds.elbo_estimate(lam, model, rng.standard_normal(2))
                         for _ in range(M)])
        kl = 2 * 0.5 * (math.log(v) + 1.0 / v - 1.0)
        want = log_c - kl
        se = vals.std(ddof=1) / math.sqrt(M)
        assert abs(vals.mean() - want) <= 3 * se

    def test_mean_on_prior_only_svm(self, rng):
        # y = 0 kills the data term; the remaining expectations under N(0, I)
        # reduce to one-dimensional Gaussian integrals (Gauss-Hermite oracle)
        n = 4
        model = SvmModel(SvmData(y=np.zeros(n)))
        lam = zero_lambda(3, n, 1, 1)

        nodes, weights = np.polynomial.hermite_e.hermegauss(80)
        weights = weights / np.sqrt(2 * math.pi)
        phi = 1.0 / (1.0 + np.exp(-nodes))
        e_phi2 = float(weights @ phi ** 2)
        e_log = float(weights @ np.log1p(-phi ** 2))
        want = (-(n - 1) / 2.0 * (1.0 + e_phi2)
                - 0.5 * (1.0 - e_phi2)
                + 0.5 * e_log
                - 3.0 / 20.0)
        # subtract E[log q] = -(dim/2) log 2pi - dim/2
        dim = 3 + n
        want += 0.5 * dim * math.log(2 * math.pi) + 0.5 * dim

        M = 40_000
        vals = np.array([bounds.elbo_estimate(lam, model, rng.standard_normal(dim))
                         for _ in range(M)])
        se = vals.std(ddof=1) / math.sqrt(M)
        assert abs(vals.mean() - want) <= 3 * se


class TestPathAndTotal:
    def test_path_vanishes_at_matching_posterior(self, rng):
        dims = ModelDims(G=2, n=2, L=1, ell=0)
        model = StandardNormalPosterior(dims)
        lam = zero_lambda(2, 2, 1, 0)
        for _ in range(20):
            est = bounds.path_gradient(lam, model, rng.standard_normal(4))
            assert np.all(est.grad == 0.0)

    def test_total_equals_path_minus_score_per_draw(self, rng):
        lam = random_lambda(2, BandPattern.banded(3, 1, 1), rng)
        model = QuadraticModel(ModelDims(G=2, n=3, L=1, ell=1), rng)
        s = rng.standard_normal(5)
        p = bounds.path_gradient(lam, model, s)
        t = bounds.total_gradient(lam, model, s)
        sc = family.score_lambda(lam, family.reparam(lam, s))
        np.testing.assert_array_equal(t.grad, p.grad - sc)
        assert t.bound == p.bound

    def test_path_and_total_agree_in_expectation(self, rng):
        # both unbiased for the bound gradient; score has mean zero
        lam = random_lambda(1, BandPattern.banded(2, 1, 1), rng, scale=0.3)
        model = QuadraticModel(ModelDims(G=1, n=2, L=1, ell=1), rng)
        M = 20_000
        diffs = np.empty((M, lam.layout.size))
        for k in range(M):
            s = rng.standard_normal(3)
            diffs[k] = (bounds.total_gradient(lam, model, s).grad
                        - bounds.path_gradient(lam, model, s).grad)
        se = diffs.std(axis=0, ddof=1) / math.sqrt(M)
        z = np.abs(diffs.mean(axis=0)) / se
        assert np.all(z <= 4.0), f"max z = {z.max():.2f}"


class TestIwlb:
    def test_k1_equals_elbo(self, rng):
        lam = random_lambda(2, BandPattern.banded(2, 1, 0), rng)
        model = QuadraticModel(ModelDims(G=2, n=2, L=1, ell=0), rng)
        s = rng.standard_normal(4)
        assert bounds.iwlb_estimate(lam, model, s[None, :]) == \
            bounds.elbo_estimate(lam, model, s)

    def test_exact_at_matching_posterior(self, rng):
        dims = ModelDims(G=1, n=2, L=1, ell=1)
        model = StandardNormalPosterior(dims)
        lam = zero_lambda(1, 2, 1, 1)
        for K in (1, 2, 5, 17):
            S = rng.standard_normal((K, 3))
            assert bounds.iwlb_estimate(lam, model, S) == 0.0  # log evidence

    def test_exchangeable_in_draw_order(self, rng):
        lam = random_lambda(1, BandPattern.banded(2, 1, 0), rng)
        model = QuadraticModel(ModelDims(G=1, n=2, L=1, ell=0), rng)
        S = rng.standard_normal((6, 3))
        a = bounds.iwlb_estimate(lam, model, S)
        b = bounds.iwlb_estimate(lam, model, S[::-1])
        c = bounds.iwlb_estimate(lam, model, S[rng.permutation(6)])
        assert a == b == c

    def test_tightens_with_k(self, rng):
        # paired replications at 4 standard errors
        dims = ModelDims(G=1, n=1, L=1, ell=0)
        model = MismatchedGaussianPosterior(dims)
        lam = zero_lambda()
        reps = 4000
        l1 = np.empty(reps)
        l5 = np.empty(reps)
        l20 = np.empty(reps)
        for r in range(reps):
            S = rng.standard_normal((20, 2))
            l1[r] = bounds.iwlb_estimate(lam, model, S[:1])
            l5[r] = bounds.iwlb_estimate(lam, model, S[:5])
            l20[r] = bounds.iwlb_estimate(lam, model, S)
        for lo, hi in [(l1, l5), (l5, l20)]:
            d = hi - lo
            assert d.mean() / (d.std(ddof=1) / math.sqrt(reps)) >= 4.0

    def test_normalized_weights_sum_to_one(self, rng):
        lam = random_lambda(1, BandPattern.banded(3, 1, 1), rng)
        model = QuadraticModel(ModelDims(G=1, n=3, L=1, ell=1), rng)
        ws = bounds.importance_weights(lam, model, rng.standard_normal((9, 4)))
        assert abs(ws.normalized.sum() - 1.0) < 1e-12

    def test_huge_log_weights_stay_finite(self, rng):
        # the shifted log-sum-exp never exponentiates raw weights
        class Loud:
            dims = ModelDims(G=1, n=1, L=1, ell=0)

            def log_joint(self, theta):
                return 5000.0 + float(theta @ theta)

            def grad(self, theta):
                return 2.0 * theta

        lam = zero_lambda()
        S = rng.standard_normal((8, 2))
        val = bounds.iwlb_estimate(lam, Loud(), S)
        assert np.isfinite(val) and val > 4000
        assert np.isfinite(bounds.renyi_bound(lam, Loud(), S, alpha=0.5))
        ws = bounds.importance_weights(lam, Loud(), S)
        assert abs(ws.normalized.sum() - 1.0) < 1e-12


class TestRenyi:
    def test_alpha_zero_is_iwlb_bitwise(self, rng):
        lam = random_lambda(1, BandPattern.banded(2, 1, 0), rng)
        model = QuadraticModel(ModelDims(G=1, n=2, L=1, ell=0), rng)
        S = rng.standard_normal((7, 3))
        assert bounds.renyi_bound(lam, model, S, alpha=0.0) == \
            bounds.iwlb_estimate(lam, model, S)

    def test_alpha_one_is_mean_log_weight(self, rng):
        lam = random_lambda(1, BandPattern.banded(2, 1, 0), rng)
        model = QuadraticModel(ModelDims(G=1, n=2, L=1, ell=0), rng)
        S = rng.standard_normal((5, 3))
        ws = bounds.importance_weights(lam, model, S)
        got = bounds.renyi_bound(lam, model, S, alpha=1.0)
        assert got == pytest.approx(float(ws.log_weights.mean()), rel=1e-14)

    def test_decreasing_in_alpha(self, rng):
        dims = ModelDims(G=1, n=1, L=1, ell=0)
        model = MismatchedGaussianPosterior(dims)
        lam = zero_lambda()
        S = rng.standard_normal((40, 2))
        vals = [bounds.renyi_bound(lam, model, S, alpha=a) for a in (-1.0, 0.0, 0.5, 1.0, 2.0)]
        assert all(a > b for a, b in zip(vals, vals[1:]))


class TestDreg:
    def test_k1_collapses_to_path(self, rng):
        lam = random_lambda(2, BandPattern.banded(2, 1, 1), rng)
        model = QuadraticModel(ModelDims(G=2, n=2, L=1, ell=1), rng)
        s = rng.standard_normal(4)
        d = bounds.dreg_gradient(lam, model, s[None, :])
        p = bounds.path_gradient(lam, model, s)
        np.testing.assert_array_equal(d.grad, p.grad)
        assert d.bound == p.bound

    def test_zero_at_matching_posterior(self, rng):
        dims = ModelDims(G=1, n=2, L=1, ell=0)
        model = StandardNormalPosterior(dims)
        lam = zero_lambda(1, 2, 1, 0)
        for _ in range(10):
            est = bounds.dreg_gradient(lam, model, rng.standard_normal((4, 3)))
            assert np.all(est.grad == 0.0)

    def test_squared_weights_shrink_the_sum(self, rng):
        # sum of squared normalized weights is at most one
        lam = random_lambda(1, BandPattern.banded(2, 1, 0), rng)
        model = QuadraticModel(ModelDims(G=1, n=2, L=1, ell=0), rng)
        ws = bounds.importance_weights(lam, model, rng.standard_normal((8, 3)))
        wt = ws.normalized
        assert (wt ** 2).sum() <= 1.0 + 1e-12

    def test_parallel_map_matches_serial(self, rng):
        from concurrent.futures import ThreadPoolExecutor

        lam = random_lambda(2, BandPattern.banded(3, 1, 1), rng)
        model = QuadraticModel(ModelDims(G=2, n=3, L=1, ell=1), rng)
        S = rng.standard_normal((8, 5))
        serial = bounds.dreg_gradient(lam, model, S)
        with ThreadPoolExecutor(max_workers=4) as pool:
            parallel = bounds.dreg_gradient(lam, model, S, map_fn=pool.map)
        np.testing.assert_array_equal(serial.grad, parallel.grad)
        assert serial.bound == parallel.bound

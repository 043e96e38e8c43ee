import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hurdlecmp import cmp
from hurdlecmp.cmp import CmpParams, TruncationPolicy
from hurdlecmp.errors import DivergentSeries, DomainError, TruncationBudgetExceeded


def brute_z(lam, nu, terms=500, start=0):
    """High-precision partial sum of the CMP series (independent oracle)."""
    with mpmath.workdps(40):
        lam = mpmath.mpf(lam)
        return sum(lam ** j / mpmath.factorial(j) ** nu for j in range(start, terms))


def brute_pmf(n, lam, nu, terms=500):
    with mpmath.workdps(40):
        return float(mpmath.mpf(lam) ** n / mpmath.factorial(n) ** nu / brute_z(lam, nu, terms))


# frozen from brute_z(2, 0.5, 500) at 40 digits
Z_2_HALF = 22.858619788663695


def test_frozen_oracle_value():
    assert float(brute_z(2.0, 0.5)) == pytest.approx(Z_2_HALF, abs=1e-13)


class TestNormalizingConstant:
    def test_poisson_case(self):
        r = cmp.normalizing_constant(CmpParams(1.5, 1.0), TruncationPolicy(tail_tol=1e-10))
        assert abs(r.value - math.exp(1.5)) <= 1e-10
        assert r.tail_bound <= 1e-10
        assert r.value >= 1

    def test_small_lambda(self):
        r = cmp.normalizing_constant(CmpParams(1e-14, 0.7))
        assert r.value == pytest.approx(1.0, abs=1e-13)

    def test_against_brute_force(self):
        r = cmp.normalizing_constant(CmpParams(2.0, 0.5), TruncationPolicy(tail_tol=1e-12))
        assert abs(r.value - Z_2_HALF) < 1e-10
        assert r.tail_bound <= 1e-12

    def test_tail_bound_is_certified(self):
        # the true omitted mass never exceeds the reported bound
        for lam, nu in [(2.0, 0.5), (5.0, 1.3), (0.7, 0.0), (10.0, 2.0)]:
            r = cmp.normalizing_constant(CmpParams(lam, nu), TruncationPolicy(tail_tol=1e-6))
            omitted = float(brute_z(lam, nu, 2000) - brute_z(lam, nu, r.terms_used))
            # nu = 0 is an exact geometric tail, hence the rounding slack
            assert 0 <= omitted <= r.tail_bound * (1 + 1e-9)
            assert r.tail_bound <= 1e-6

    def test_geometric_nu_zero(self):
        r = cmp.normalizing_constant(CmpParams(0.5, 0.0))
        assert r.value == pytest.approx(2.0, abs=1e-10)

    def test_divergent(self):
        with pytest.raises(DivergentSeries):
            CmpParams(1.0, 0.0)
        with pytest.raises(DivergentSeries):
            cmp.log_normalizer(np.array([0.5]), 0.0)

    def test_budget(self):
        with pytest.raises(TruncationBudgetExceeded):
            cmp.normalizing_constant(CmpParams(50.0, 0.3), TruncationPolicy(max_terms=100))

    def test_chunk_growth_matches_single_pass(self, monkeypatch):
        log_lam = np.log([0.5, 5.0, 1e-5, 30.0])
        expected = cmp.log_normalizer(log_lam, 0.8)
        monkeypatch.setattr(cmp, "_first_chunk", lambda *a: 3)
        np.testing.assert_allclose(cmp.log_normalizer(log_lam, 0.8), expected, rtol=1e-14)


class TestPmf:
    def test_poisson_value(self):
        assert cmp.pmf(2, CmpParams(1.5, 1.0)) == pytest.approx(0.2510214, abs=1e-7)
        assert cmp.pmf(2, CmpParams(1.5, 1.0)) == pytest.approx(
            math.exp(-1.5) * 1.5 ** 2 / 2, abs=1e-9)

    def test_ratio_example(self):
        p = CmpParams(2.0, 0.7)
        assert cmp.pmf(2, p) / cmp.pmf(3, p) == pytest.approx(3 ** 0.7 / 2, rel=1e-10)

    def test_zero_mass(self):
        assert cmp.pmf(0, CmpParams(2.0, 0.5)) == pytest.approx(1 / Z_2_HALF, rel=1e-10)

    @pytest.mark.parametrize("lam", [0.5, 1, 2, 5, 10])
    def test_poisson_equivalence(self, lam):
        n = np.arange(51)
        # default tail_tol=1e-10 allows ~5e-12 error in pmf(0); 1e-12 needs a tighter policy
        ours = np.exp(cmp.log_pmf(n, np.full(51, math.log(lam)), 1.0, TruncationPolicy(tail_tol=1e-14)))
        assert np.max(np.abs(ours - stats.poisson.pmf(n, lam))) < 1e-12

    def test_ratio_identity_grid(self):
        n = np.arange(1, 31)
        for lam in [0.3, 1.0, 2.5, 7.0]:
            for nu in [0.3, 0.63, 1.0, 1.7, 3.0]:
                lp = cmp.log_pmf(np.arange(31), np.full(31, math.log(lam)), nu)
                ratio = np.exp(lp[:-1] - lp[1:])
                np.testing.assert_allclose(ratio, n ** nu / lam, rtol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(lam=st.floats(0.05, 10.0), nu=st.floats(0.3, 3.0), n=st.integers(1, 30))
    def test_ratio_identity_property(self, lam, nu, n):
        p = CmpParams(lam, nu)
        lo, hi = cmp.pmf(n - 1, p), cmp.pmf(n, p)
        if hi > 1e-300:
            assert lo / hi == pytest.approx(n ** nu / lam, rel=1e-10)

    @pytest.mark.parametrize("lam,nu", [(2.0, 0.5), (5.0, 1.3), (0.4, 0.0), (8.0, 0.8)])
    def test_mass_over_used_support(self, lam, nu):
        tol = 1e-10
        r = cmp.normalizing_constant(CmpParams(lam, nu), TruncationPolicy(tail_tol=tol))
        n = np.arange(r.terms_used)
        total = np.exp(cmp.log_pmf(n, np.full(n.size, math.log(lam)), nu)).sum()
        assert 1 - 2 * tol <= total <= 1 + 1e-13

    def test_negative_n(self):
        with pytest.raises(DomainError):
            cmp.pmf(-1, CmpParams(1.0, 1.0))


class TestZeroTruncated:
    def test_ztp_closed_form(self):
        assert cmp.zt_pmf(1, CmpParams(1.5, 1.0)) == pytest.approx(
            1.5 / (math.exp(1.5) - 1), abs=1e-9)
        assert cmp.zt_pmf(1, CmpParams(1.5, 1.0)) == pytest.approx(0.4308254, abs=1e-7)

    def test_tiny_lambda_collapses_to_one(self):
        for nu in [0.3, 1.0, 2.5]:
            assert cmp.zt_pmf(1, CmpParams(1e-12, nu)) == pytest.approx(1.0, abs=1e-10)

    def test_brute_renormalization(self):
        with mpmath.workdps(40):
            terms = [mpmath.mpf(3) ** n / mpmath.factorial(n) ** 1.4 for n in range(0, 301)]
            expected = float(terms[4] / sum(terms[1:]))
        assert cmp.zt_pmf(4, CmpParams(3.0, 1.4)) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("lam,nu", [(0.3, 0.5), (2.0, 0.63), (3.0, 1.4), (9.0, 1.0)])
    def test_conditional_identity(self, lam, nu):
        p = CmpParams(lam, nu)
        p0 = cmp.pmf(0, p)
        for n in range(1, 25):
            assert cmp.zt_pmf(n, p) == pytest.approx(cmp.pmf(n, p) / (1 - p0), rel=1e-10)

    @pytest.mark.parametrize("lam,nu", [(1e-6, 1.0), (1.5, 1.0), (3.0, 1.4), (2.0, 0.4)])
    def test_normalization(self, lam, nu):
        tol = 1e-10
        n = np.arange(1, 400)
        total = np.exp(cmp.log_pmf(n, np.full(n.size, math.log(lam)), nu, zero_truncated=True)).sum()
        assert abs(total - 1) <= 2 * tol

    def test_zero_rejected(self):
        with pytest.raises(DomainError):
            cmp.zt_pmf(0, CmpParams(1.0, 1.0))


class TestMoments:
    def test_poisson(self):
        mean, var = cmp.moments(CmpParams(2.0, 1.0))
        assert mean == pytest.approx(2.0, abs=1e-9)
        assert var == pytest.approx(2.0, abs=1e-9)

    def test_small_lambda(self):
        mean, _ = cmp.moments(CmpParams(1e-9, 0.4))
        assert mean == pytest.approx(0.0, abs=1e-8)

    def test_against_series_oracle(self):
        with mpmath.workdps(40):
            w = [mpmath.mpf(2) ** n / mpmath.factorial(n) ** 0.5 for n in range(600)]
            z = sum(w)
            m1 = sum(n * t for n, t in enumerate(w)) / z
            m2 = sum(n * n * t for n, t in enumerate(w)) / z
            expected = (float(m1), float(m2 - m1 ** 2))
        mean, var = cmp.moments(CmpParams(2.0, 0.5))
        assert mean == pytest.approx(expected[0], rel=1e-10)
        assert var == pytest.approx(expected[1], rel=1e-9)
        assert var > mean

    def test_dispersion_direction(self):
        for lam in [1, 2, 5]:
            for nu in [0.3, 0.63, 1.5, 2]:
                mean, var = cmp.moments(CmpParams(lam, nu))
                if nu < 1:
                    assert var / mean > 1
                else:
                    assert var / mean < 1


def _chi2_pvalue(draws, probs_fn, lo, hi):
    """Chi-square GOF over lo..hi with the upper tail lumped into the last bin."""
    support = np.arange(lo, hi + 1)
    probs = np.array([probs_fn(int(n)) for n in support])
    probs[-1] = 1 - probs[:-1].sum()
    observed = np.bincount(np.minimum(draws, hi) - lo, minlength=support.size)
    expected = probs * draws.size
    # merge sparse upper bins so every expected count is at least 5
    while expected[-1] < 5:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected, observed = expected[:-1], observed[:-1]
    return stats.chisquare(observed, expected).pvalue


class TestSampling:
    def test_poisson_mean(self):
        draws = cmp.sample(CmpParams(1.5, 1.0), rng=np.random.default_rng(11), size=100_000)
        se = math.sqrt(1.5 / draws.size)
        assert abs(draws.mean() - 1.5) < 3 * se

    def test_tiny_lambda(self):
        draws = cmp.sample(CmpParams(1e-12, 2.0), rng=np.random.default_rng(1), size=1000)
        assert np.all(draws == 0)

    def test_goodness_of_fit(self):
        p = CmpParams(2.0, 0.6)
        draws = cmp.sample(p, rng=np.random.default_rng(12), size=100_000)
        assert _chi2_pvalue(draws, lambda n: cmp.pmf(n, p), 0, 20) > 0.01

    def test_determinism(self):
        p = CmpParams(3.0, 0.8)
        a = cmp.sample(p, rng=np.random.default_rng(5), size=50)
        b = cmp.sample(p, rng=np.random.default_rng(5), size=50)
        np.testing.assert_array_equal(a, b)

    def test_zt_tiny_lambda(self):
        draws = cmp.zt_sample(CmpParams(1e-12, 1.0), rng=np.random.default_rng(2), size=500)
        assert np.all(draws == 1)

    def test_zt_poisson_mean(self):
        draws = cmp.zt_sample(CmpParams(1.5, 1.0), rng=np.random.default_rng(13), size=100_000)
        mean = 1.5 / (1 - math.exp(-1.5))
        var = mean * (1 + 1.5 - mean)
        assert mean == pytest.approx(1.9308, abs=1e-4)
        assert abs(draws.mean() - mean) < 3 * math.sqrt(var / draws.size)

    def test_zt_goodness_of_fit(self):
        p = CmpParams(3.0, 1.4)
        draws = cmp.zt_sample(p, rng=np.random.default_rng(14), size=100_000)
        assert draws.min() >= 1
        assert _chi2_pvalue(draws, lambda n: cmp.zt_pmf(n, p), 1, 15) > 0.01

    def test_batch_matches_pmf(self):
        # rows with different lambdas: compare per-row empirical means to moments
        rng = np.random.default_rng(15)
        log_lam = np.repeat(np.log([0.5, 4.0]), 40_000)
        draws = cmp.sample_batch(log_lam, 0.7, rng)
        for k, lam in enumerate([0.5, 4.0]):
            mean, var = cmp.moments(CmpParams(lam, 0.7))
            chunk = draws[k * 40_000:(k + 1) * 40_000]
            assert abs(chunk.mean() - mean) < 3.5 * math.sqrt(var / chunk.size)

    def test_batch_zero_truncated_support(self):
        draws = cmp.sample_batch(np.log(np.full(2000, 0.05)), 1.2, np.random.default_rng(3),
                                 zero_truncated=True)
        assert draws.min() >= 1

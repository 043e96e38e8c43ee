import json
import math

import numpy as np
import pytest
from scipy import stats

from hurdlecmp.diagnostics import (
    DicResult,
    dic,
    fit_report,
    heidelberger_welch,
    hpd_interval,
    mc_standard_error,
    parameter_summary,
    posterior_predictive,
    validation_metrics,
    write_report,
)
from hurdlecmp.errors import InsufficientDraws, LengthMismatch, NonFiniteDeviance, TraceTooShort
from hurdlecmp.mcmc import ChainConfig, PosteriorChain
from hurdlecmp.models import HurdleFit


def make_chain(draws, names, meta):
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    chain = PosteriorChain(draws, list(names), 0.3, ChainConfig(n_iter=draws.shape[0] + 1, burn_in=0))
    chain.meta.update(meta)
    return chain


class TestDic:
    def test_constant_loglik(self):
        chain = make_chain(np.random.default_rng(0).normal(size=(50, 2)), ["a", "b"], {})
        res = dic(chain, lambda t: -3.5)
        assert res.p_d == 0.0
        assert res.dic == 7.0

    def test_identities_exact(self):
        rng = np.random.default_rng(1)
        chain = make_chain(rng.normal(size=(200, 1)), ["mu"], {})
        y = rng.normal(size=20)
        res = dic(chain, lambda t: float(np.sum(stats.norm.logpdf(y, t[0]))))
        assert res.dic == 2 * res.dbar - res.dhat
        assert res.p_d == res.dbar - res.dhat

    def test_conjugate_normal_pd(self):
        # y_i ~ N(mu_j, 1) for 3 groups, flat-ish prior: p_d equals the parameter count
        rng = np.random.default_rng(2)
        y = rng.normal([0.0, 1.0, -2.0], 1.0, size=(40, 3))
        post_mean, post_sd = y.mean(axis=0), 1 / math.sqrt(40)
        draws = rng.normal(post_mean, post_sd, size=(10_000, 3))

        def loglik(t):
            return float(np.sum(stats.norm.logpdf(y, t)))

        res = dic(draws, loglik)
        assert res.p_d == pytest.approx(3.0, abs=0.2)

    def test_nonfinite(self):
        chain = make_chain(np.zeros((5, 1)), ["a"], {})
        with pytest.raises(NonFiniteDeviance):
            dic(chain, lambda t: -math.inf)

    def test_needs_two_draws(self):
        with pytest.raises(InsufficientDraws):
            dic(np.zeros((1, 1)), lambda t: 0.0)

    def test_additivity_with_reported_rows(self):
        # combined rows of the simulation tables are component sums
        assert 293.71 + 752.79 == pytest.approx(1046.50, abs=1e-9)
        assert 884.66 + 647.92 == pytest.approx(1532.57, abs=0.011)


class TestHpd:
    def test_point_mass(self):
        h = hpd_interval(np.full(50, 2.5), 0.9)
        assert (h.lower, h.upper) == (2.5, 2.5)

    def test_standard_normal(self):
        x = np.random.default_rng(3).standard_normal(1_000_000)
        h = hpd_interval(x, 0.95)
        assert h.lower == pytest.approx(-1.96, abs=0.02)
        assert h.upper == pytest.approx(1.96, abs=0.02)

    def test_exponential_starts_at_zero(self):
        x = np.random.default_rng(4).exponential(size=100_000)
        h = hpd_interval(x, 0.95)
        assert h.lower < 0.01
        assert h.upper == pytest.approx(-math.log(0.05), rel=0.03)

    def test_coverage_count(self):
        rng = np.random.default_rng(5)
        for S in [10, 37, 101, 1000]:
            x = rng.gamma(2.0, size=S)
            h = hpd_interval(x, 0.8)
            assert np.sum((x >= h.lower) & (x <= h.upper)) >= math.ceil(0.8 * S)

    def test_not_wider_than_equal_tailed(self):
        rng = np.random.default_rng(6)
        for dist in [rng.gamma(1.5, size=5000), rng.normal(size=5000), rng.beta(0.5, 3, size=5000)]:
            h = hpd_interval(dist, 0.9)
            lo, hi = np.quantile(dist, [0.05, 0.95])
            assert h.upper - h.lower <= hi - lo + 1e-12

    def test_leftmost_tie(self):
        h = hpd_interval(np.arange(10.0), 0.5)
        assert (h.lower, h.upper) == (0.0, 4.0)

    def test_too_few(self):
        with pytest.raises(InsufficientDraws):
            hpd_interval(np.arange(9.0), 0.9)


class TestHeidelbergerWelch:
    def test_constant(self):
        res = heidelberger_welch(np.full(500, 3.0))
        assert res["stationary"] and res["halfwidth_ok"]

    def test_iid_passes(self):
        rng = np.random.default_rng(7)
        passes = sum(heidelberger_welch(rng.normal(5, 1, 2000))["stationary"] for _ in range(100))
        assert passes >= 95

    def test_trend_fails(self):
        rng = np.random.default_rng(8)
        n = 2000
        trend = np.linspace(0, 3, n)
        fails = sum(not heidelberger_welch(rng.normal(size=n) + trend)["stationary"] for _ in range(100))
        assert fails >= 95

    def test_initial_transient_discarded(self):
        rng = np.random.default_rng(9)
        x = rng.normal(10, 1, 5000)
        x[:300] += np.linspace(15, 0, 300)
        res = heidelberger_welch(x)
        assert res["stationary"] and res["kept_fraction"] < 1.0

    def test_halfwidth_fails_near_zero_mean(self):
        res = heidelberger_welch(np.random.default_rng(10).normal(0.0, 1.0, 1000))
        assert not res["halfwidth_ok"]

    def test_too_short(self):
        with pytest.raises(TraceTooShort):
            heidelberger_welch(np.zeros(99))


class TestPredictive:
    def poisson_chain(self, lam=2.0, n=500):
        return make_chain(np.full((n, 1), math.log(lam)), ["beta_intercept"], {"kind": "poisson"})

    def test_poisson_mean(self):
        pred = posterior_predictive(self.poisson_chain(), np.ones((1, 1)), S=1000, rng=np.random.default_rng(11))
        vals = pred.draws[:, 0]
        assert abs(vals.mean() - 2.0) < 3 * math.sqrt(2.0 / 1000)
        assert pred.with_replacement

    def test_without_replacement_when_possible(self):
        pred = posterior_predictive(self.poisson_chain(n=500), np.ones((3, 1)), S=100, rng=np.random.default_rng(12))
        assert not pred.with_replacement
        assert len(set(pred.param_index.tolist())) == 100

    def test_gate_closed_gives_zeros(self):
        bchain = make_chain(np.full((50, 1), -40.0), ["beta_intercept"],
                            {"kind": "binary", "link": {"family": "probit", "convention": "latent",
                                                        "sigma": 1.0, "alpha": 1.0}})
        pchain = make_chain(np.full((50, 1), 1.0), ["gamma_intercept"], {"kind": "ztp"})
        fit = HurdleFit(bchain, pchain)
        pred = posterior_predictive(fit, np.ones((30, 1)), S=40, rng=np.random.default_rng(13))
        assert np.all(pred.draws == 0)

    def test_gate_open_gives_positives(self):
        bchain = make_chain(np.column_stack([np.full(50, 0.5), np.full(50, 3.0)]), ["beta_intercept", "alpha"],
                            {"kind": "binary", "link": {"family": "skewed_weibull", "convention": "latent",
                                                        "sigma": 1.0, "alpha": 1.0}})
        pchain = make_chain(np.column_stack([np.full(50, 0.5), np.full(50, 0.7)]), ["gamma_intercept", "nu"],
                            {"kind": "ztcmp"})
        pred = posterior_predictive(HurdleFit(bchain, pchain), np.ones((30, 1)), S=20, rng=np.random.default_rng(14))
        assert np.all(pred.draws >= 1)
        assert pred.param_index.shape == (20, 2)

    def test_deterministic(self):
        chain = self.poisson_chain()
        a = posterior_predictive(chain, np.ones((5, 1)), S=50, rng=np.random.default_rng(15))
        b = posterior_predictive(chain, np.ones((5, 1)), S=50, rng=np.random.default_rng(15))
        assert np.array_equal(a.draws, b.draws)

    def test_offset_length(self):
        with pytest.raises(LengthMismatch):
            posterior_predictive(self.poisson_chain(), np.ones((5, 1)), offsets_new=np.zeros(4), S=5)


class TestValidationMetrics:
    def test_self_comparison(self):
        y = np.array([0, 1, 4, 0, 2])
        res = validation_metrics(y, y, y[None, :])
        assert res == {"mse": 0.0, "mae": 0.0, "ks": 0.0}

    def test_pooled_multiset(self):
        y = np.array([0, 0, 1, 3])
        draws = np.array([[3, 1, 0, 0], [0, 3, 0, 1]])
        assert validation_metrics(y, y, draws)["ks"] == 0.0

    def test_disjoint_support(self):
        res = validation_metrics(np.zeros(6), np.full(6, 5.0), np.full((10, 6), 5))
        assert res["ks"] == 1.0
        assert res["mse"] == 25.0 and res["mae"] == 5.0

    def test_hand_computed_ks(self):
        y = np.array([0, 0, 0, 2])
        draws = np.array([[0, 1, 1, 2]])
        # ECDFs on 0..2: obs (0.75, 0.75, 1), pred (0.25, 0.75, 1)
        assert validation_metrics(y, y, draws)["ks"] == pytest.approx(0.5)

    def test_bounds(self):
        rng = np.random.default_rng(16)
        for _ in range(50):
            y = rng.poisson(2, 30)
            mu = rng.gamma(2, 1, 30)
            res = validation_metrics(y, mu, rng.poisson(3, (20, 30)))
            assert 0.0 <= res["ks"] <= 1.0
            assert res["mse"] >= res["mae"] ** 2

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            validation_metrics(np.zeros(3), np.zeros(4))
        with pytest.raises(LengthMismatch):
            validation_metrics(np.zeros(3), np.zeros(3), np.zeros((2, 4)))


def test_report_files(tmp_path):
    rng = np.random.default_rng(17)
    chain = make_chain(rng.normal([1.0, 2.0], 0.1, size=(400, 2)), ["a", "b"], {})
    summary = parameter_summary(chain)
    assert list(summary.columns) == ["parameter", "Estimate", "lower", "upper", "hw_stationary"]
    doc = fit_report(summary, DicResult(10.0, 2.0, 6.0, 2.0), {"mse": 1.0, "mae": 0.5, "ks": 0.1}, model="toy")
    write_report(doc, tmp_path / "r.json", summary, tmp_path / "r.csv")
    back = json.loads((tmp_path / "r.json").read_text())
    assert back["dic"] == 10.0 and back["p_d"] == 2.0
    assert set(back["parameters"]["a"]) == {"mean", "hpd_low", "hpd_high", "hw_stationary"}
    assert back["validation"]["ks"] == 0.1
    assert (tmp_path / "r.csv").read_text().startswith("parameter,Estimate,lower,upper")


class TestMcStandardError:
    def test_iid_matches_classical(self):
        x = np.random.default_rng(31).normal(size=40_000)
        assert mc_standard_error(x) == pytest.approx(1 / 200, rel=0.15)

    def test_ar1_inflation(self):
        # AR(1) with phi: variance of the mean inflates by (1 + phi) / (1 - phi)
        rng = np.random.default_rng(32)
        phi, n = 0.8, 200_000
        e = rng.normal(size=n)
        x = np.empty(n)
        x[0] = e[0] / math.sqrt(1 - phi**2)
        for t in range(1, n):
            x[t] = phi * x[t - 1] + e[t]
        sd = 1 / math.sqrt(1 - phi**2)
        target = sd * math.sqrt((1 + phi) / (1 - phi) / n)
        assert mc_standard_error(x) == pytest.approx(target, rel=0.15)

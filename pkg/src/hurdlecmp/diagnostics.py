"""Posterior assessment: DIC, HPD intervals, Heidelberger-Welch stationarity,
posterior predictive simulation and held-out validation metrics.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import cmp
from .errors import InsufficientDraws, LengthMismatch, NonFiniteDeviance, TraceTooShort
from .links import LinkSpec, log_prob_event
from .mcmc import PosteriorChain

__all__ = [
    "DicResult",
    "HpdInterval",
    "PredictiveSample",
    "dic",
    "hpd_interval",
    "heidelberger_welch",
    "mc_standard_error",
    "posterior_predictive",
    "validation_metrics",
    "parameter_summary",
    "fit_report",
    "write_report",
    "CVM_CRITICAL_95",
]

# 95% point of the Cramer-von Mises statistic for a Brownian bridge
CVM_CRITICAL_95 = 0.46136
HPD_MIN_DRAWS = 10


@dataclass(frozen=True)
class DicResult:
    dic: float
    p_d: float
    dbar: float
    dhat: float


@dataclass(frozen=True)
class HpdInterval:
    lower: float
    upper: float
    prob: float


@dataclass
class PredictiveSample:
    """``draws[s]`` is one replicate response vector.

    ``param_index[s]`` holds the chain row(s) that generated replicate ``s``
    (two columns for a hurdle fit: binary row, positive row).
    """

    draws: np.ndarray
    param_index: np.ndarray
    with_replacement: bool = False

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


def dic(chain: PosteriorChain, loglik, theta_bar=None) -> DicResult:
    """Deviance information criterion ``2 * Dbar - Dhat``.

    ``Dhat`` uses the componentwise posterior mean on the chain's own
    scale unless ``theta_bar`` is given.
    """
    draws = chain.draws if isinstance(chain, PosteriorChain) else np.asarray(chain, dtype=float)
    if draws.shape[0] < 2:
        raise InsufficientDraws("DIC needs at least two kept draws")
    ll = np.array([loglik(theta) for theta in draws], dtype=float)
    if not np.all(np.isfinite(ll)):
        bad = int(np.flatnonzero(~np.isfinite(ll))[0])
        raise NonFiniteDeviance(f"log-likelihood is {ll[bad]} at draw {bad}")
    theta_bar = draws.mean(axis=0) if theta_bar is None else np.asarray(theta_bar, dtype=float)
    ll_hat = float(loglik(theta_bar))
    if not math.isfinite(ll_hat):
        raise NonFiniteDeviance(f"log-likelihood is {ll_hat} at the posterior mean")
    dbar = float(np.mean(-2.0 * ll))
    dhat = -2.0 * ll_hat
    return DicResult(dic=2.0 * dbar - dhat, p_d=dbar - dhat, dbar=dbar, dhat=dhat)


def hpd_interval(draws, prob: float = 0.95) -> HpdInterval:
    """Shortest window holding ``ceil(prob * S)`` of the sorted draws.

    Ties go to the leftmost window.
    """
    if not 0.0 < prob < 1.0:
        raise ValueError(f"prob must lie in (0, 1), got {prob}")
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    S = x.size
    if S < HPD_MIN_DRAWS:
        raise InsufficientDraws(f"need at least {HPD_MIN_DRAWS} draws, got {S}")
    inside = math.ceil(prob * S - 1e-9)
    widths = x[inside - 1:] - x[: S - inside + 1]
    i = int(np.argmin(widths))
    return HpdInterval(float(x[i]), float(x[i + inside - 1]), prob)


def _batch_means_s0(x: np.ndarray) -> float:
    """Spectral density at frequency zero by non-overlapping batch means."""
    n = x.size
    size = max(1, int(math.floor(math.sqrt(n))))
    n_batches = n // size
    if n_batches < 2:
        return float(np.var(x))
    means = x[: n_batches * size].reshape(n_batches, size).mean(axis=1)
    return size * float(np.var(means, ddof=1))


def mc_standard_error(trace) -> float:
    """Monte Carlo standard error of a trace mean, ``sqrt(S0 / n)`` by batch means."""
    x = np.asarray(trace, dtype=float).ravel()
    if x.size < 2:
        raise InsufficientDraws("need at least 2 draws")
    return math.sqrt(_batch_means_s0(x) / x.size)


def heidelberger_welch(trace, eps: float = 0.1, step: float = 0.1, max_discard: float = 0.5,
                       critical: float = CVM_CRITICAL_95) -> dict:
    """Heidelberger-Welch stationarity and halfwidth tests for one trace.

    The Cramer-von Mises statistic of the cumulative-sum bridge is tested on
    the trace after discarding 0, 10, ..., 50% of its start; the first pass
    stops the search. The halfwidth test then checks
    ``1.96 * sqrt(S0 / n) < eps * |mean|`` on the kept part.

    Returns
    -------
    dict
        ``stationary``, ``kept_fraction``, ``halfwidth_ok``, ``statistic``,
        ``mean`` and ``halfwidth``.
    """
    x = np.asarray(trace, dtype=float).ravel()
    n = x.size
    if n < 100:
        raise TraceTooShort(f"Heidelberger-Welch needs at least 100 values, got {n}")
    if np.ptp(x) == 0.0:
        return dict(stationary=True, kept_fraction=1.0, halfwidth_ok=True, statistic=0.0,
                    mean=float(x[0]), halfwidth=0.0)
    s0_tail = _batch_means_s0(x[int(n * max_discard):])
    starts = [int(round(f * n)) for f in np.arange(0.0, max_discard + 1e-9, step)]
    stationary, kept, stat = False, None, math.nan
    for start in starts:
        y = x[start:]
        m = y.size
        bridge = np.cumsum(y - y.mean())
        stat = float(np.sum(bridge**2) / (m * m * s0_tail)) if s0_tail > 0 else math.inf
        if stat < critical:
            stationary, kept = True, y
            break
    if not stationary:
        return dict(stationary=False, kept_fraction=0.0, halfwidth_ok=False, statistic=stat,
                    mean=float(np.mean(x[starts[-1]:])), halfwidth=math.nan)
    mean = float(kept.mean())
    halfwidth = 1.96 * math.sqrt(_batch_means_s0(kept) / kept.size)
    return dict(stationary=True, kept_fraction=kept.size / n, halfwidth_ok=bool(halfwidth < eps * abs(mean)),
                statistic=stat, mean=mean, halfwidth=halfwidth)


def _link_from_meta(meta: dict, alpha=None) -> LinkSpec:
    spec = meta["link"]
    return LinkSpec(spec["family"], alpha if alpha is not None else spec["alpha"], spec["sigma"], spec["convention"])


def _gate_prob(chain, row, X, offset):
    theta = chain.draws[row]
    has_alpha = "alpha" in chain.param_names
    coef = theta[:-1] if has_alpha else theta
    link = _link_from_meta(chain.meta, theta[-1] if has_alpha else None)
    eta = X @ coef
    if chain.meta.get("binary_offset"):
        eta = eta + offset
    return np.exp(log_prob_event(link, eta)[0])


def _simulate_count(chain, row, X, offset, rng, zero_truncated, policy):
    kind = chain.meta["kind"]
    theta = chain.draws[row]
    if kind in ("poisson", "ztp"):
        log_lam = X @ theta + offset
        if not zero_truncated:
            return rng.poisson(np.exp(log_lam))
        return cmp.sample_batch(log_lam, 1.0, rng, policy, zero_truncated=True)
    return cmp.sample_batch(X @ theta[:-1] + offset, theta[-1], rng, policy, zero_truncated=zero_truncated)


def _pick_rows(n_draws, S, rng):
    replace = S > n_draws
    return rng.choice(n_draws, size=S, replace=replace), replace


def posterior_predictive(fit, X_new, offsets_new=None, S: int = 1000, rng=None,
                         policy: cmp.TruncationPolicy = cmp.DEFAULT_POLICY) -> PredictiveSample:
    """Replicate responses at ``X_new`` from posterior draws.

    ``fit`` is a :class:`~hurdlecmp.models.HurdleFit` or a single ordinary
    (Poisson/CMP) chain. Draw indices are sampled without replacement when
    ``S`` does not exceed the number of kept draws, otherwise with
    replacement (flagged on the result). For a hurdle fit each replicate
    passes every row through the Bernoulli gate and draws a zero-truncated
    count where the gate opens.
    """
    rng = rng if rng is not None else np.random.default_rng()
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    n = X_new.shape[0]
    off = np.zeros(n) if offsets_new is None else np.asarray(offsets_new, dtype=float).ravel()
    if off.size != n:
        raise LengthMismatch(f"{n} design rows but {off.size} offsets")
    out = np.zeros((S, n), dtype=np.int64)
    if isinstance(fit, PosteriorChain):
        rows, replace = _pick_rows(fit.n_draws, S, rng)
        for s, r in enumerate(rows):
            out[s] = _simulate_count(fit, r, X_new, off, rng, False, policy)
        return PredictiveSample(out, rows, replace)

    bchain, pchain = fit.binary_chain, fit.positive_chain
    brows, rep_b = _pick_rows(bchain.n_draws, S, rng)
    prows, rep_p = _pick_rows(pchain.n_draws, S, rng)
    for s in range(S):
        gate = rng.random(n) < _gate_prob(bchain, brows[s], X_new, off)
        if gate.any():
            out[s, gate] = _simulate_count(pchain, prows[s], X_new[gate], off[gate], rng, True, policy)
    return PredictiveSample(out, np.column_stack([brows, prows]), rep_b or rep_p)


def validation_metrics(y_observed, y_predicted_mean, predictive_draws=None) -> dict:
    """MSE and MAE against the predictive mean, and the KS distance.

    KS is the largest gap between the observed ECDF and the predictive ECDF
    pooled over replicates, over the integer grid 0..max value seen.
    """
    y = np.asarray(y_observed, dtype=float).ravel()
    mu = np.asarray(y_predicted_mean, dtype=float).ravel()
    if y.size != mu.size:
        raise LengthMismatch(f"{y.size} observations vs {mu.size} predictions")
    err = y - mu
    out = {"mse": float(np.mean(err**2)), "mae": float(np.mean(np.abs(err))), "ks": math.nan}
    if predictive_draws is not None:
        draws = np.asarray(predictive_draws)
        if draws.ndim == 1:
            draws = draws[None, :]
        if draws.shape[-1] != y.size:
            raise LengthMismatch(f"replicates have length {draws.shape[-1]}, observed {y.size}")
        pooled = draws.ravel().astype(np.int64)
        top = int(max(y.max(initial=0), pooled.max(initial=0)))
        obs_counts = np.bincount(y.astype(np.int64), minlength=top + 1)
        pred_counts = np.bincount(pooled, minlength=top + 1)
        ecdf_obs = np.cumsum(obs_counts) / y.size
        ecdf_pred = np.cumsum(pred_counts) / pooled.size
        out["ks"] = float(np.max(np.abs(ecdf_obs - ecdf_pred)))
    return out


def parameter_summary(chain: PosteriorChain, prob: float = 0.95, extra: dict | None = None) -> pd.DataFrame:
    """Per-parameter posterior mean, HPD bounds and stationarity flag.

    ``extra`` maps additional labels to derived draw vectors (for example
    rescaled coefficients) summarized the same way.
    """
    rows = []
    columns = {name: chain.draws[:, j] for j, name in enumerate(chain.param_names)}
    if extra:
        columns.update(extra)
    for name, x in columns.items():
        h = hpd_interval(x, prob)
        hw = heidelberger_welch(x) if x.size >= 100 else {"stationary": None}
        rows.append({"parameter": name, "Estimate": float(np.mean(x)), "lower": h.lower, "upper": h.upper,
                     "hw_stationary": hw["stationary"]})
    return pd.DataFrame(rows, columns=["parameter", "Estimate", "lower", "upper", "hw_stationary"])


def fit_report(summary: pd.DataFrame, dic_result: DicResult | None, validation: dict | None = None,
               **fields) -> dict:
    """JSON-ready report for one fitted model."""
    doc = dict(fields)
    if dic_result is not None:
        doc.update({"dic": dic_result.dic, "p_d": dic_result.p_d, "dbar": dic_result.dbar, "dhat": dic_result.dhat})
    doc["parameters"] = {
        r.parameter: {"mean": r.Estimate, "hpd_low": r.lower, "hpd_high": r.upper,
                      "hw_stationary": None if r.hw_stationary is None else bool(r.hw_stationary)}
        for r in summary.itertuples(index=False)
    }
    if validation is not None:
        doc["validation"] = validation
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def write_report(doc: dict, json_path, summary: pd.DataFrame | None = None, csv_path=None) -> None:
    """Write the JSON report (sorted keys) and, optionally, the summary CSV."""
    Path(json_path).write_text(json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if summary is not None and csv_path is not None:
        summary.to_csv(csv_path, index=False, float_format="%.10g")

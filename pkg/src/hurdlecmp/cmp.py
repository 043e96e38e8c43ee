"""Conway-Maxwell-Poisson distribution.

The CMP pmf is ``lambda**n / (n!)**nu / Z(lambda, nu)``, where the
normalizing constant ``Z`` is an infinite series without closed form.
Everything here evaluates that series in log space and stops only once a
certified geometric bound on the discarded tail is below the requested
tolerance: after index ``k`` with ``eps_k = lambda / (k+1)**nu < 1`` the
remainder is at most ``t_{k+1} / (1 - eps_k)``.

Two layers are exposed:

* scalar functions taking :class:`CmpParams` (``normalizing_constant``,
  ``pmf``, ``zt_pmf``, ``moments``, ``sample``, ``zt_sample``);
* vectorized helpers taking an array of ``log(lambda)`` and a shared
  ``nu`` (``log_normalizer``, ``log_pmf``, ``sample_batch``), which the
  regression models call once per MCMC step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .errors import DivergentSeries, DomainError, TruncationBudgetExceeded

__all__ = [
    "CmpParams",
    "TruncationPolicy",
    "ZResult",
    "DEFAULT_POLICY",
    "normalizing_constant",
    "pmf",
    "zt_pmf",
    "moments",
    "sample",
    "zt_sample",
    "log_normalizer",
    "log_pmf",
    "sample_batch",
]

@dataclass(frozen=True)
class CmpParams:
    """Rate-like ``lam`` and dispersion ``nu`` of a CMP distribution."""

    lam: float
    nu: float

    def __post_init__(self):
        if not (self.nu >= 0 and math.isfinite(self.nu)):
            raise DomainError(f"nu must be finite and >= 0, got {self.nu}")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be finite and > 0, got {self.lam}")
        if self.nu == 0 and self.lam >= 1:
            raise DivergentSeries(
                f"series diverges for nu = 0 and lambda = {self.lam} >= 1")

    @property
    def log_lam(self) -> float:
        return math.log(self.lam)


@dataclass(frozen=True)
class TruncationPolicy:
    """Truncation rule for the normalizing series.

    ``tail_tol`` bounds the omitted tail mass; ``max_terms`` caps the
    number of summed terms.
    """

    tail_tol: float = 1e-10
    max_terms: int = 10_000

    def __post_init__(self):
        if not self.tail_tol > 0:
            raise ValueError("tail_tol must be positive")
        if self.max_terms < 2:
            raise ValueError("max_terms must be >= 2")


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class ZResult:
    value: float
    terms_used: int
    tail_bound: float
    log_value: float = field(repr=False, default=float("nan"))


@dataclass
class _Series:
    """Cumulative sums of a truncated series, one row per lambda.

    ``cum[i, c] * exp(shift[i])`` is the partial sum through term
    ``start + c``; columns past a row's stop index hold further partial sums
    and are ignored.
    """

    cum: np.ndarray         # (m, J) scaled cumulative sums
    shift: np.ndarray       # (m,) log scale of each row
    last: np.ndarray        # (m,) index of the last summed term
    log_tail: np.ndarray    # (m,) log of the certified tail bound
    start: int

    @property
    def total(self) -> np.ndarray:
        """Scaled row totals (same scale as ``cum``)."""
        return self.cum[np.arange(len(self.last)), self.last - self.start]

    @property
    def log_total(self) -> np.ndarray:
        return np.log(self.total) + self.shift


@lru_cache(maxsize=8)
def _tables(n: int):
    j = np.arange(n + 2, dtype=float)
    return gammaln(j + 1.0), np.log(j + 1.0), np.log(np.maximum(j, 1.0))


def _first_chunk(log_lam_max, nu, log_tol):
    """Number of terms after which the largest-lambda row is likely done.

    Bisects for the first index past the mode whose log term is below the
    threshold (absolute for the large sums, hence the ``min(0, peak)``),
    with a small margin for the geometric tail factor.
    """
    if nu == 0:
        return int(min(max(log_tol / log_lam_max, 1.0) + 16, 1 << 20))
    mode = math.exp(min(log_lam_max / nu, 30.0))

    def log_term(k):
        return k * log_lam_max - nu * math.lgamma(k + 1.0)

    k0 = int(mode)
    thresh = log_tol + min(0.0, log_term(k0)) - 2.0
    lo, hi = k0, max(2 * k0, k0 + 16)
    while log_term(hi) > thresh and hi < (1 << 24):
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_term(mid) > thresh:
            lo = mid
        else:
            hi = mid
    return hi + 8


def _series(log_lam, nu, policy=DEFAULT_POLICY, start=0, weight=0) -> _Series:
    """Sum ``j**weight * lam**j / (j!)**nu`` over ``j >= start`` per row.

    The tail after index ``k`` is bounded with the ratio
    ``eps_k = ((k+2)/(k+1))**weight * lam / (k+1)**nu``; for ``weight = 0``
    this is the plain geometric bound. The tolerance is applied as
    ``tail_tol * min(1, partial_sum)`` so that sums far below one
    (``Z - 1`` for tiny lambda) keep relative accuracy; for ``Z`` itself the
    partial sum is at least one and the tolerance is absolute.

    Past the mode both the bound and the threshold are monotone in ``k``, so
    a cheap necessary condition locates a candidate column and the exact
    bound is then checked only there, stepping forward until it holds.
    """
    log_lam = np.atleast_1d(np.asarray(log_lam, dtype=float))
    if log_lam.ndim != 1:
        raise ValueError("log_lam must be one-dimensional")
    if not np.all(np.isfinite(log_lam)):
        raise DomainError("lambda must be finite and > 0")
    nu = float(nu)
    if not (nu >= 0 and math.isfinite(nu)):
        raise DomainError(f"nu must be finite and >= 0, got {nu}")
    if nu == 0 and np.any(log_lam >= 0):
        raise DivergentSeries("series diverges for nu = 0 and lambda >= 1")
    if weight > 0:
        start = max(start, 1)

    max_terms = policy.max_terms
    log_tol = math.log(policy.tail_tol)
    lg, log_jp1, log_j = _tables(max_terms + start)
    m = log_lam.size

    carry = np.full(m, -np.inf)     # log partial sum before the current chunk
    done = np.zeros(m, dtype=bool)
    last = np.zeros(m, dtype=np.int64)
    log_tail = np.zeros(m)
    finish_chunk = np.zeros(m, dtype=np.int64)
    blocks, shifts = [], []
    lo = start
    chunk = _first_chunk(float(log_lam.max()), nu, log_tol)
    while True:
        hi = min(lo + chunk, start + max_terms)
        width = hi - lo
        # log terms for j = lo..hi; the extra column feeds the tail bound
        lt = np.outer(log_lam, np.arange(lo, hi + 1, dtype=float))
        lt -= nu * lg[lo:hi + 1]
        if weight:
            lt += weight * log_j[lo:hi + 1]
        body = lt[:, :-1]
        shift = np.maximum(carry, body.max(axis=1))
        cum = np.cumsum(np.exp(body - shift[:, None]), axis=1)
        cum += np.exp(carry - shift)[:, None]
        log_end = np.log(cum[:, -1]) + shift

        # ratio term lam/(j+1)**nu < 1, and next term already below threshold
        past_mode = (nu * log_jp1[lo:hi])[None, :] > log_lam[:, None]
        if weight:
            past_mode = (nu * log_jp1[lo:hi] - weight * (log_jp1[lo + 1:hi + 1] - log_jp1[lo:hi]))[None, :] > log_lam[:, None]
        cand = past_mode & (lt[:, 1:] <= (log_tol + np.minimum(log_end, 0.0))[:, None])
        cand[done] = False
        first = np.argmax(cand, axis=1)
        rows = np.nonzero(cand[np.arange(m), first])[0]
        while rows.size:
            f = first[rows]
            jj = lo + f
            log_eps = log_lam[rows] - nu * log_jp1[jj]
            if weight:
                log_eps += weight * (log_jp1[jj + 1] - log_jp1[jj])
            bound = lt[rows, f + 1] - np.log1p(-np.exp(log_eps))
            part = np.log(cum[rows, f]) + shift[rows]
            good = bound <= log_tol + np.minimum(part, 0.0)
            g = rows[good]
            last[g] = jj[good]
            log_tail[g] = bound[good]
            finish_chunk[g] = len(blocks)
            done[g] = True
            rows = rows[~good]
            first[rows] += 1
            rows = rows[first[rows] < width]
        blocks.append(cum)
        shifts.append(shift)
        if done.all():
            break
        if hi >= start + max_terms:
            raise TruncationBudgetExceeded(
                f"tail bound {policy.tail_tol:g} not reached within {max_terms} terms "
                f"(max lambda = {math.exp(log_lam.max()):.6g}, nu = {nu:g})")
        carry = log_end
        lo = hi
        chunk *= 2

    if len(blocks) == 1:
        return _Series(blocks[0], shifts[0], last, log_tail, start)
    ref = np.stack(shifts)[finish_chunk, np.arange(m)]
    cum = np.concatenate([blk * np.exp(sh - ref)[:, None] for blk, sh in zip(blocks, shifts)], axis=1)
    return _Series(cum, ref, last, log_tail, start)


# -- vectorized API ---------------------------------------------------------

def _row_groups(log_lam, min_rows=128, n_groups=4):
    """Split rows into lambda-sorted groups so small-lambda rows stop early."""
    m = log_lam.size
    if m < min_rows:
        return [slice(None)]
    order = np.argsort(log_lam, kind="stable")
    return np.array_split(order, n_groups)


def log_normalizer(log_lam, nu, policy=DEFAULT_POLICY, zero_truncated=False):
    """``log Z(lambda_i, nu)`` per entry, or ``log(Z - 1)`` if zero-truncated."""
    log_lam = np.atleast_1d(np.asarray(log_lam, dtype=float))
    start = 1 if zero_truncated else 0
    out = np.empty(log_lam.shape)
    for rows in _row_groups(log_lam):
        out[rows] = _series(log_lam[rows], nu, policy, start=start).log_total
    return out


def log_unnormalized(n, log_lam, nu):
    """``n log(lambda) - nu log(n!)``, broadcasting over arrays."""
    n = np.asarray(n, dtype=float)
    return n * np.asarray(log_lam, dtype=float) - nu * gammaln(n + 1.0)


def log_pmf(n, log_lam, nu, policy=DEFAULT_POLICY, zero_truncated=False):
    n = np.asarray(n)
    if zero_truncated and np.any(n < 1):
        raise DomainError("zero-truncated pmf is defined for n >= 1 only")
    if np.any(n < 0):
        raise DomainError("n must be non-negative")
    log_lam = np.asarray(log_lam, dtype=float)
    lz = log_normalizer(np.ravel(log_lam), nu, policy, zero_truncated).reshape(log_lam.shape)
    return log_unnormalized(n, log_lam, nu) - lz


def sample_batch(log_lam, nu, rng, policy=DEFAULT_POLICY, zero_truncated=False):
    """One draw per entry of ``log_lam`` by inversion of the truncated CDF."""
    log_lam = np.atleast_1d(np.asarray(log_lam, dtype=float))
    start = 1 if zero_truncated else 0
    u = rng.random(log_lam.size)
    out = np.empty(log_lam.size, dtype=np.int64)
    for rows in _row_groups(log_lam):
        s = _series(log_lam[rows], nu, policy, start=start)
        target = u[rows] * s.total
        # the row total sits at column last - start, so the search never passes it
        out[rows] = np.argmax(s.cum >= target[:, None], axis=1) + s.start
    return out


# -- scalar API ---------------------------------------------------------------

def _z(params: CmpParams, policy: TruncationPolicy, start: int) -> ZResult:
    s = _series([params.log_lam], params.nu, policy, start=start)
    lz = float(s.log_total[0])
    return ZResult(value=_exp_or_inf(lz), terms_used=int(s.last[0] - start + 1),
                   tail_bound=_exp_or_inf(float(s.log_tail[0])), log_value=lz)


def _exp_or_inf(x: float) -> float:
    # log_value stays exact when the linear value leaves the float range
    return math.exp(x) if x < 709.7 else math.inf


def normalizing_constant(params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY) -> ZResult:
    """Truncated ``Z(lambda, nu)`` with its certified tail bound.

    Raises
    ------
    DivergentSeries
        If ``nu == 0`` and ``lambda >= 1``.
    TruncationBudgetExceeded
        If ``policy.max_terms`` terms do not meet ``policy.tail_tol``.
    """
    return _z(params, policy, start=0)


def pmf(n: int, params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    if n < 0:
        raise DomainError("n must be non-negative")
    lz = _z(params, policy, 0).log_value
    return math.exp(n * params.log_lam - params.nu * math.lgamma(n + 1) - lz)


def zt_pmf(n: int, params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY) -> float:
    """Zero-truncated pmf ``lambda**n / (n!)**nu / (Z - 1)`` for ``n >= 1``."""
    if n < 1:
        raise DomainError("zero-truncated pmf is defined for n >= 1 only")
    lz1 = _z(params, policy, 1).log_value
    return math.exp(n * params.log_lam - params.nu * math.lgamma(n + 1) - lz1)


def moments(params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY):
    """Mean and variance by direct weighted summation.

    The first and second moment series are each truncated under their own
    certified tail bound, so no numerical differentiation is involved.
    """
    lz = _z(params, policy, 0).log_value
    s1 = _series([params.log_lam], params.nu, policy, weight=1).log_total[0]
    s2 = _series([params.log_lam], params.nu, policy, weight=2).log_total[0]
    mean = math.exp(s1 - lz)
    second = math.exp(s2 - lz)
    return mean, max(second - mean * mean, 0.0)


def sample(params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY, rng=None, size=None):
    """Draw from CMP(lambda, nu) by CDF inversion over the truncated support."""
    return _sample(params, policy, rng, size, start=0)


def zt_sample(params: CmpParams, policy: TruncationPolicy = DEFAULT_POLICY, rng=None, size=None):
    """Draw from the zero-truncated CMP (support ``n >= 1``)."""
    return _sample(params, policy, rng, size, start=1)


def _sample(params, policy, rng, size, start):
    rng = np.random.default_rng(rng)
    s = _series([params.log_lam], params.nu, policy, start=start)
    cum = s.cum[0, : s.last[0] - start + 1]
    n = 1 if size is None else int(np.prod(size))
    target = rng.random(n) * cum[-1]
    idx = np.minimum(np.searchsorted(cum, target, side="left"), cum.size - 1)
    draws = (idx + start).astype(np.int64)
    if size is None:
        return int(draws[0])
    return draws.reshape(size)

"""Binary-regression links for the zero/positive gate of the hurdle model.

Both links follow the latent-variable reading ``y+ = 1{x'b + u > 0}`` with
``u ~ F``, so ``P(y+ = 1) = 1 - F(-eta)``. For the probit link this equals
``Phi(eta / sigma)``. For the skewed Weibull link, whose ``F`` lives on
``u > 0`` only, it gives ``exp(-(-eta/sigma)**alpha)`` for ``eta < 0`` and
exactly 1 for ``eta >= 0``.

The skewed Weibull link can also be read as ``p = F_SW(eta)``, matching
the inverse link ``g(p) = [-log(1 - p)]**(1/alpha)``. The two readings
disagree for an asymmetric ``F``; ``convention="cdf"`` selects the second.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import gammaln, log_ndtr, ndtr

from .errors import LengthMismatch

__all__ = [
    "LinkFamily",
    "LinkSpec",
    "prob_event",
    "log_prob_event",
    "binary_loglik",
    "sw_equivalent_scale",
    "probit_equivalent_scale",
    "weibull_inverse_link",
]


class LinkFamily(str, Enum):
    PROBIT = "probit"
    SKEWED_WEIBULL = "skewed_weibull"


@dataclass(frozen=True)
class LinkSpec:
    """Link family with its shape ``alpha`` and scale ``sigma``.

    ``alpha`` is ignored for the probit link. ``clamp``, when set, confines
    probabilities to ``[clamp, 1 - clamp]`` so deterministic regions do not
    produce ``-inf`` log-likelihoods (exploratory use only).
    """

    family: LinkFamily = LinkFamily.PROBIT
    alpha: float = 1.0
    sigma: float = 1.0
    convention: str = "latent"
    clamp: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", LinkFamily(self.family))
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.convention not in ("latent", "cdf"):
            raise ValueError("convention must be 'latent' or 'cdf'")
        if self.clamp is not None and not 0 < self.clamp < 0.5:
            raise ValueError("clamp must lie in (0, 0.5)")

    def with_alpha(self, alpha: float) -> "LinkSpec":
        return LinkSpec(self.family, alpha, self.sigma, self.convention, self.clamp)


def log_prob_event(link: LinkSpec, eta):
    """Return ``(log p, log(1 - p))`` for linear predictor(s) ``eta``."""
    eta = np.asarray(eta, dtype=float)
    z = eta / link.sigma
    if link.family is LinkFamily.PROBIT:
        log_p, log_q = log_ndtr(z), log_ndtr(-z)
    elif link.convention == "latent":
        # u > 0 only, so eta >= 0 makes the event certain
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = np.where(z < 0, (-np.minimum(z, 0.0)) ** link.alpha, 0.0)
            log_p = -w
            log_q = np.where(z < 0, np.log(-np.expm1(-w)), -np.inf)
    else:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = np.where(z > 0, np.maximum(z, 0.0) ** link.alpha, 0.0)
            log_p = np.where(z > 0, np.log(-np.expm1(-w)), -np.inf)
            log_q = -w
    if link.clamp is not None:
        lo, hi = math.log(link.clamp), math.log1p(-link.clamp)
        log_p = np.clip(log_p, lo, hi)
        log_q = np.clip(log_q, lo, hi)
    return log_p, log_q


def prob_event(link: LinkSpec, eta):
    """Probability that the binary outcome is 1."""
    eta = np.asarray(eta, dtype=float)
    if link.family is LinkFamily.PROBIT and link.clamp is None:
        return ndtr(eta / link.sigma)
    return np.exp(log_prob_event(link, eta)[0])


def binary_loglik(y_plus, etas, link: LinkSpec) -> float:
    """Bernoulli log-likelihood; ``-inf`` if an outcome has probability 0."""
    y_plus = np.asarray(y_plus)
    etas = np.asarray(etas, dtype=float)
    if y_plus.shape != etas.shape:
        raise LengthMismatch(f"{y_plus.shape} outcomes vs {etas.shape} predictors")
    log_p, log_q = log_prob_event(link, etas)
    return float(np.sum(np.where(y_plus == 1, log_p, log_q)))


def _weibull_variance(alpha):
    """Var of a unit-scale Weibull, computed without cancellation for large alpha."""
    g1 = gammaln(1.0 + 1.0 / alpha)
    g2 = gammaln(1.0 + 2.0 / alpha)
    # tiny alpha overflows to inf, which is the correct limit
    with np.errstate(over="ignore", invalid="ignore"):
        return np.exp(2.0 * g1) * np.expm1(g2 - 2.0 * g1)


def sw_equivalent_scale(alpha):
    """Scale that puts skewed Weibull coefficients on the unit-probit scale.

    Equals ``1 / sd`` of a unit Weibull(alpha). Diverges as alpha grows
    because the Weibull variance shrinks to zero; returns ``inf`` once the
    variance underflows.
    """
    v = _weibull_variance(np.asarray(alpha, dtype=float))
    with np.errstate(divide="ignore"):
        out = 1.0 / np.sqrt(v)
    return float(out) if np.ndim(out) == 0 else out


def probit_equivalent_scale(alpha):
    """Scale for probit coefficients when the Weibull link has ``sigma = 1``.

    Equals the standard deviation of a unit Weibull(alpha), the reciprocal
    of :func:`sw_equivalent_scale`.
    """
    out = np.sqrt(_weibull_variance(np.asarray(alpha, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


def weibull_inverse_link(p, alpha, sigma=1.0):
    """``g(p) = sigma * [-log(1 - p)]**(1/alpha)``, the CDF-convention inverse."""
    p = np.asarray(p, dtype=float)
    return sigma * (-np.log1p(-p)) ** (1.0 / alpha)

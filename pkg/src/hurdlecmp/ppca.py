"""Probabilistic PCA for sparse compositional covariates.

The model is ``x = B z + mu + eps`` with ``z ~ N(0, I_k)`` and
``eps ~ N(0, sigma2 I_d)``, so ``x ~ N(mu, B B' + sigma2 I)``. ``mu`` is
fixed at the column mean. ``B`` and ``sigma2`` are fitted by EM, either by
maximum likelihood or, for rank selection, by maximizing the likelihood
times a conjugate prior (Normal loadings, inverse-gamma noise variance).

All EM updates work from the d x d sample covariance, so one iteration
costs ``O(d^2 k)`` regardless of the number of rows.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConvergenceFailure, DimensionMismatch, SingularCovariance

__all__ = [
    "PpcaModel",
    "PpcaFitReport",
    "MapPrior",
    "em_fit",
    "log_likelihood",
    "posterior_latent",
    "map_fit",
    "map_bic",
    "select_k",
    "transform",
    "reconstruct_coefficients",
    "free_parameters",
]

log = logging.getLogger(__name__)


@dataclass
class PpcaModel:
    B: np.ndarray
    mu: np.ndarray
    sigma2: float
    seed: int | None = None
    loglik: float | None = None

    def __post_init__(self):
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        if self.B.shape[0] != self.mu.size:
            raise DimensionMismatch(f"B has {self.B.shape[0]} rows but mu has length {self.mu.size}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    def covariance(self) -> np.ndarray:
        return self.B @ self.B.T + self.sigma2 * np.eye(self.d)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "k": self.k,
            "mu": self.mu.tolist(),
            "B": self.B.ravel(order="C").tolist(),
            "sigma2": float(self.sigma2),
            "seed": self.seed,
            "loglik": None if self.loglik is None else float(self.loglik),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PpcaModel":
        B = np.asarray(doc["B"], dtype=float).reshape(doc["d"], doc["k"])
        return cls(B, doc["mu"], doc["sigma2"], doc.get("seed"), doc.get("loglik"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "PpcaModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class PpcaFitReport:
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    bic: float = math.nan
    objective: str = "likelihood"


@dataclass(frozen=True)
class MapPrior:
    """Conjugate prior used by the MAP-regularized fit.

    Loading entries are ``N(0, loading_sd**2)``; ``sigma2`` is inverse-gamma
    with the given shape and scale.
    """

    loading_sd: float = 1.0
    ig_shape: float = 0.01
    ig_scale: float = 0.01


def free_parameters(d: int, k: int) -> int:
    """Loadings up to rotation, plus the mean and the noise variance."""
    return d * k - k * (k - 1) // 2 + d + 1


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d matrix, got shape {X.shape}")
    return X


def _gaussian_loglik(S: np.ndarray, n: int, B: np.ndarray, sigma2: float) -> float:
    d = S.shape[0]
    C = B @ B.T + sigma2 * np.eye(d)
    try:
        cf = linalg.cho_factor(C, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovariance(f"B B' + sigma2 I is not positive definite (sigma2={sigma2:g})") from exc
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    if not np.isfinite(logdet):
        raise SingularCovariance(f"log-determinant underflowed (sigma2={sigma2:g})")
    trace = np.trace(linalg.cho_solve(cf, S, check_finite=False))
    return -0.5 * n * (d * math.log(2 * math.pi) + logdet + trace)


def log_likelihood(X, model: PpcaModel) -> float:
    """Marginal Gaussian log-likelihood of the rows of ``X``.

    Uses a Cholesky factor of ``B B' + sigma2 I``; no explicit inverse.
    """
    X = _as_matrix(X)
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, model expects {model.d}")
    R = X - model.mu
    S = R.T @ R / X.shape[0]
    return _gaussian_loglik(S, X.shape[0], model.B, model.sigma2)


def _inner_factor(model: PpcaModel):
    M = model.B.T @ model.B + model.sigma2 * np.eye(model.k)
    try:
        return linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("B'B + sigma2 I is not positive definite") from exc


def posterior_latent(x, model: PpcaModel):
    """Posterior mean and covariance of the latent vector given ``x``.

    Uses the k x k identities ``B'(BB' + s I)^-1 = M^-1 B'`` and
    ``I - B'(BB' + s I)^-1 B = s M^-1`` with ``M = B'B + s I``.
    The covariance is computed from the model alone, so it is the same
    object-for-object value for every ``x``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise DimensionMismatch(f"x has length {x.shape[-1]}, model expects {model.d}")
    cf = _inner_factor(model)
    mean = linalg.cho_solve(cf, model.B.T @ (x - model.mu), check_finite=False)
    cov = model.sigma2 * linalg.cho_solve(cf, np.eye(model.k), check_finite=False)
    return mean, cov


def transform(X, model: PpcaModel) -> np.ndarray:
    """Posterior-mean scores, one row per observation (N x k)."""
    X = _as_matrix(X)
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"X has {X.shape[1]} columns, model expects {model.d}")
    cf = _inner_factor(model)
    return linalg.cho_solve(cf, model.B.T @ (X - model.mu).T, check_finite=False).T


def _init_params(S: np.ndarray, k: int, rng) -> tuple[np.ndarray, float]:
    d = S.shape[0]
    Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    sigma2 = 0.5 * np.trace(S) / d
    if not sigma2 > 0:
        sigma2 = 1.0
    return Q, sigma2


def _em_step(S, n, B, sigma2, prior: MapPrior | None):
    """One EM (or ECM for the MAP objective) update from sufficient statistics.

    Also returns the parameter-expanded variant, in which the latent
    covariance is estimated as well and folded back into the loadings.
    Plain EM adjusts the loading scale very slowly when the noise is small;
    the expanded step does not.
    """
    d, k = B.shape
    M = B.T @ B + sigma2 * np.eye(k)
    cf = linalg.cho_factor(M, lower=True, check_finite=False)
    Minv = linalg.cho_solve(cf, np.eye(k), check_finite=False)
    SB = S @ B
    # per-row averages of sum_i (x_i - mu) E[z_i]' and sum_i E[z_i z_i']
    cross = SB @ Minv
    second = sigma2 * Minv + Minv @ B.T @ cross
    second = 0.5 * (second + second.T)
    A = n * second
    if prior is not None:
        A = A + (sigma2 / prior.loading_sd**2) * np.eye(k)
    B_new = linalg.solve(A, n * cross.T, assume_a="pos", check_finite=False).T
    resid = n * (np.trace(S) - 2.0 * np.sum(B_new * cross) + np.sum((B_new.T @ B_new) * second))
    resid = max(resid, 0.0)
    if prior is None:
        sigma2_new = resid / (n * d)
    else:
        sigma2_new = (resid + 2.0 * prior.ig_scale) / (n * d + 2.0 * prior.ig_shape + 2.0)
    B_px = B_new @ linalg.cholesky(second, lower=True, check_finite=False)
    return B_new, B_px, sigma2_new


def _log_prior(B, sigma2, prior: MapPrior) -> float:
    sd = prior.loading_sd
    a, b = prior.ig_shape, prior.ig_scale
    lp_B = -0.5 * np.sum(B**2) / sd**2 - B.size * (math.log(sd) + 0.5 * math.log(2 * math.pi))
    lp_s = a * math.log(b) - math.lgamma(a) - (a + 1) * math.log(sigma2) - b / sigma2
    return float(lp_B + lp_s)


def _fit(X, k, tol, max_iter, seed, prior, strict):
    X = _as_matrix(X)
    n, d = X.shape
    if not 1 <= k < d:
        raise ValueError(f"need 1 <= k < d, got k={k}, d={d}")
    if n <= d:
        warnings.warn(f"only {n} rows for dimension {d}; PPCA estimates will be unstable", stacklevel=3)
    mu = X.mean(axis=0)
    R = X - mu
    S = R.T @ R / n
    rng = np.random.default_rng(seed)
    B, sigma2 = _init_params(S, k, rng)

    def objective(B, sigma2):
        value = _gaussian_loglik(S, n, B, sigma2)
        if prior is not None:
            value += _log_prior(B, sigma2, prior)
        return value

    trace = [objective(B, sigma2)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        B_new, B_px, sigma2_new = _em_step(S, n, B, sigma2, prior)
        if not sigma2_new > 0:
            raise SingularCovariance("noise variance collapsed to zero; use the MAP fit")
        value = objective(B_new, sigma2_new)
        # exact PX-EM for the likelihood; under the prior keep whichever step scores higher
        value_px = objective(B_px, sigma2_new)
        if value_px >= value:
            B_new, value = B_px, value_px
        B, sigma2 = B_new, sigma2_new
        gain = value - trace[-1]
        trace.append(value)
        if abs(gain) < tol:
            converged = True
            break
    if max_iter == 0:
        it = 0
    model = PpcaModel(B, mu, sigma2, seed=seed)
    model.loglik = _gaussian_loglik(S, n, B, sigma2)
    report = PpcaFitReport(
        loglik_trace=trace,
        iterations=it,
        converged=converged,
        objective="likelihood" if prior is None else "log posterior",
    )
    report.bic = -2.0 * model.loglik + free_parameters(d, k) * math.log(n)
    if not converged and max_iter > 0:
        msg = f"EM did not converge in {max_iter} iterations (k={k})"
        if strict:
            exc = ConvergenceFailure(msg)
            exc.model, exc.report = model, report
            raise exc
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return model, report


def em_fit(X, k: int, tol: float = 1e-6, max_iter: int = 2000, seed: int | None = 0,
           strict: bool = False):
    """Maximum-likelihood PPCA by EM.

    Parameters
    ----------
    X : (N, d) array
    k : int
        Latent dimension, ``1 <= k < d``.
    tol : float
        Stop once the absolute log-likelihood gain falls below ``tol``.
    max_iter : int
        Iteration cap. ``0`` returns the initialization.
    seed : int
        Seeds the random orthonormal starting loadings.
    strict : bool
        Raise :class:`ConvergenceFailure` (with ``.model`` and ``.report``
        attached) instead of warning when ``max_iter`` is hit.

    Returns
    -------
    model : PpcaModel
    report : PpcaFitReport
        ``loglik_trace[0]`` is the value at initialization.
    """
    return _fit(X, k, tol, max_iter, seed, None, strict)


def map_fit(X, k: int, prior: MapPrior | None = None, tol: float = 1e-6, max_iter: int = 2000,
            seed: int | None = 0, strict: bool = False):
    """PPCA fitted at the posterior mode under :class:`MapPrior`.

    The trace in the report holds the log posterior, which EM increases.
    """
    return _fit(X, k, tol, max_iter, seed, prior or MapPrior(), strict)


def map_bic(X, k: int, prior: MapPrior | None = None, **opts) -> float:
    """BIC with the log-likelihood evaluated at the MAP estimate."""
    _, report = map_fit(X, k, prior, **opts)
    return report.bic


def select_k(X, k_max: int, prior: MapPrior | None = None, return_scores: bool = False, **opts):
    """Latent dimension minimizing the MAP-regularized BIC.

    Ties go to the smaller ``k``. A rank whose fit fails is skipped with
    a warning.
    """
    X = _as_matrix(X)
    if not 1 <= k_max < X.shape[1]:
        raise ValueError(f"need 1 <= k_max < d, got k_max={k_max}, d={X.shape[1]}")
    scores = {}
    for k in range(1, k_max + 1):
        try:
            scores[k] = map_bic(X, k, prior, **opts)
        except (SingularCovariance, ConvergenceFailure, linalg.LinAlgError) as exc:
            warnings.warn(f"skipping k={k}: {exc}", RuntimeWarning, stacklevel=2)
    if not scores:
        raise ConvergenceFailure("no candidate rank could be fitted")
    best = min(scores, key=lambda k: (scores[k], k))
    return (best, scores) if return_scores else best


def reconstruct_coefficients(coef, model: PpcaModel, intercept_mean: str = "column_mean") -> np.ndarray:
    """Map regression coefficients on PC scores back to the composition space.

    Returns ``B @ coef + mean_term``. With ``intercept_mean="column_mean"``
    the mean term is the composition column mean; ``"none"`` drops it.
    ``coef`` may be a k-vector or an (S, k) matrix of posterior draws.
    """
    coef = np.asarray(coef, dtype=float)
    if coef.shape[-1] != model.k:
        raise DimensionMismatch(f"got {coef.shape[-1]} coefficients for {model.k} components")
    if intercept_mean == "column_mean":
        shift = model.mu
    elif intercept_mean == "none":
        shift = np.zeros(model.d)
    else:
        raise ValueError(f"unknown intercept_mean policy {intercept_mean!r}")
    return coef @ model.B.T + shift

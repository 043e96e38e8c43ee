"""Bayesian hurdle count regression with Conway-Maxwell-Poisson components.

Modules
-------
cmp          CMP normalizing constant, pmf, moments and sampling
links        probit and skewed Weibull binary links
ppca         probabilistic PCA for compositional covariates
mcmc         seeded blockwise Metropolis-Hastings
models       ordinary, binary, zero-truncated and hurdle regressions
diagnostics  DIC, HPD, Heidelberger-Welch, predictive validation, reports
pipeline     ingestion, split, simulation designs, roster runs
cli          ``hurdlecmp`` command line
"""
__version__ = "0.1.0"

from .cmp import CmpParams, TruncationPolicy
from .links import LinkSpec
from .mcmc import ChainConfig, PosteriorChain
from .models import HurdleFit, PriorSpec, RegressionData, fit_hurdle
from .ppca import PpcaModel

__all__ = [
    "__version__",
    "CmpParams",
    "TruncationPolicy",
    "LinkSpec",
    "ChainConfig",
    "PosteriorChain",
    "HurdleFit",
    "PriorSpec",
    "RegressionData",
    "fit_hurdle",
    "PpcaModel",
]

"""Gaussian-process priors over station coefficient fields.

Each scalar coefficient of the quantile model varies across stations as an
independent Gaussian process with constant mean and exponential covariance
sill * exp(-dist/range), where distance is Euclidean in raw (lat, lon)
degrees.  A small nugget keeps factorizations stable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .validation import check_positive

_LOG_2PI = np.log(2.0 * np.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A covariance matrix could not be Cholesky-factorized."""


@dataclass(frozen=True)
class GPHyperParams:
    """Mean, sill (variance) and correlation range of one coefficient field."""

    mean: float
    sill: float
    corr_range: float

    def __post_init__(self):
        check_positive(self.sill, "sill")
        check_positive(self.corr_range, "corr_range")

    def default_nugget(self) -> float:
        return 1e-8 * self.sill


@dataclass
class GPField:
    """A coefficient field: one value per station plus its hyperparameters."""

    values: np.ndarray
    hyper: GPHyperParams

    def __post_init__(self):
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float))


def pairwise_distances(locations) -> np.ndarray:
    """Euclidean distances between (lat, lon) rows, in degrees."""
    loc = np.atleast_2d(np.asarray(locations, dtype=float))
    if loc.shape[1] != 2:
        raise ValueError("locations must be (n, 2) rows of (lat, lon)")
    diff = loc[:, None, :] - loc[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def exp_cov_matrix(locations, hyper: GPHyperParams, nugget: float = 0.0) -> np.ndarray:
    """Exponential covariance sill*exp(-dist/range) + nugget on the diagonal."""
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    dist = pairwise_distances(locations)
    n = dist.shape[0]
    off_diag = dist + np.eye(n)  # avoid counting the diagonal as duplicate
    if nugget == 0.0 and np.any(off_diag == 0.0):
        warnings.warn("duplicate station locations with zero nugget give a singular covariance",
                      stacklevel=2)
    return hyper.sill * np.exp(-dist / hyper.corr_range) + nugget * np.eye(n)


def _cholesky(cov: np.ndarray):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from None


def gp_sample(hyper: GPHyperParams, locations, rng: np.random.Generator,
              nugget: float | None = None) -> GPField:
    """Draw one field from the GP prior using a lower-triangular factor."""
    if nugget is None:
        nugget = hyper.default_nugget()
    cov = exp_cov_matrix(locations, hyper, nugget)
    chol = _cholesky(cov)
    z = rng.standard_normal(cov.shape[0])
    return GPField(values=hyper.mean + chol @ z, hyper=hyper)


def mvn_logpdf(x: np.ndarray, mean, cov: np.ndarray) -> float:
    """Exact multivariate normal log-density via Cholesky."""
    x = np.asarray(x, dtype=float)
    resid = x - mean
    try:
        factor = cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"covariance is not positive definite: {exc}") from None
    solved = cho_solve(factor, resid)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(-0.5 * (resid @ solved + logdet + x.size * _LOG_2PI))


def gp_logpdf(field: GPField, locations, nugget: float | None = None) -> float:
    """Log-density of a field under its GP prior."""
    if nugget is None:
        nugget = field.hyper.default_nugget()
    cov = exp_cov_matrix(locations, field.hyper, nugget)
    return mvn_logpdf(field.values, field.hyper.mean, cov)


@dataclass(frozen=True)
class HyperPrior:
    """Weakly informative priors for (mean, sill, range) of a field.

    mean ~ Normal(0, mean_sd^2); sill ~ half-Normal(sill_scale);
    range ~ Uniform(range_bounds).  Scaled for continental-degree distances.
    """

    mean_sd: float = 100.0
    sill_scale: float = 10.0
    range_bounds: tuple[float, float] = (0.1, 50.0)

    def log_density(self, hyper: GPHyperParams) -> float:
        lo, hi = self.range_bounds
        if not (lo <= hyper.corr_range <= hi) or hyper.sill <= 0:
            return -np.inf
        lp = -0.5 * (hyper.mean / self.mean_sd) ** 2 - np.log(self.mean_sd) - 0.5 * _LOG_2PI
        lp += -0.5 * (hyper.sill / self.sill_scale) ** 2  # half-normal kernel
        lp += -np.log(hi - lo)
        return float(lp)

    def medians(self) -> GPHyperParams:
        from scipy.special import ndtri

        lo, hi = self.range_bounds
        return GPHyperParams(mean=0.0,
                             sill=self.sill_scale * ndtri(0.75),
                             corr_range=0.5 * (lo + hi))

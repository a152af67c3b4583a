"""Inter-annual statistics and the seasonal log-variance model.

The day-of-year sample variance is modeled on the log scale as intercept +
linear and quadratic terms in the day-of-year sample mean + order-4
harmonics + a feedback term on the previous day's variance innovation.  The
fitted seasonal standard deviation sigma_d feeds the reduced quantile model
as a covariate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from sklearn.base import BaseEstimator

from .harmonics import FourierCoeffs, fourier_design_row
from .stations import DAYS_PER_YEAR, StationSeries

_VAR_FLOOR = 1e-6  # degC^2; keeps logs finite on degenerate fixtures


class ZeroVarianceWarning(UserWarning):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass
class InterAnnualStats:
    """Per-day-of-year sample mean/variance across years."""

    mu_hat: np.ndarray
    var_hat: np.ndarray
    n_obs: np.ndarray

    def __post_init__(self):
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.var_hat = np.asarray(self.var_hat, dtype=float)
        self.n_obs = np.asarray(self.n_obs, dtype=int)
        for name, arr in (("mu_hat", self.mu_hat), ("var_hat", self.var_hat), ("n_obs", self.n_obs)):
            if arr.shape != (DAYS_PER_YEAR,):
                raise ValueError(f"{name} must have length {DAYS_PER_YEAR}")
        if np.any(self.var_hat[self.defined] < 0):
            raise ValueError("sample variances must be nonnegative")

    @property
    def defined(self) -> np.ndarray:
        """Days with enough years (>= 2) for a sample variance."""
        return self.n_obs >= 2


@dataclass
class VarianceParams:
    """Coefficients of the seasonal log-variance model."""

    beta0: float
    beta1: float
    beta2: float
    fourier: FourierCoeffs
    rho1: float

    def __post_init__(self):
        if not abs(self.rho1) < 1.0:
            raise ValueError("the innovation feedback coefficient must satisfy |rho1| < 1")

    @classmethod
    def zeros(cls, k: int = 4) -> "VarianceParams":
        return cls(beta0=0.0, beta1=0.0, beta2=0.0, fourier=FourierCoeffs.zeros(k), rho1=0.0)


def interannual_stats(series: StationSeries) -> InterAnnualStats:
    """Day-of-year mean and unbiased variance over the observed years."""
    if series.n_years < 2:
        raise InsufficientDataError("need at least 2 years of data")
    mask = series.mask
    n_obs = mask.sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN days
        mu = np.nanmean(series.values, axis=0)
        var = np.nanvar(series.values, axis=0, ddof=1)
    mu = np.where(n_obs >= 1, mu, np.nan)
    var = np.where(n_obs >= 2, var, np.nan)
    return InterAnnualStats(mu_hat=mu, var_hat=var, n_obs=n_obs)


def _design(stats: InterAnnualStats, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Full-year design [1, mu, mu^2, harmonics] and the usable-column mask."""
    d = np.arange(1, DAYS_PER_YEAR + 1)
    mu = np.where(np.isfinite(stats.mu_hat), stats.mu_hat, 0.0)
    X = np.column_stack([np.ones(DAYS_PER_YEAR), mu, mu**2, fourier_design_row(d, k)])
    usable = np.ones(X.shape[1], dtype=bool)
    mu_def = stats.mu_hat[np.isfinite(stats.mu_hat)]
    if mu_def.size == 0 or np.ptp(mu_def) < 1e-12 * max(1.0, np.abs(mu_def).max()):
        warnings.warn("day-of-year mean is constant; dropping its collinear columns",
                      stacklevel=2)
        usable[1] = usable[2] = False
    return X, usable


def _floored_var(stats: InterAnnualStats, var_floor: float) -> np.ndarray:
    vhat = stats.var_hat.copy()
    zero = stats.defined & (vhat < var_floor)
    if np.any(zero):
        warnings.warn(f"{int(zero.sum())} day(s) with near-zero sample variance floored "
                      f"at {var_floor}", ZeroVarianceWarning, stacklevel=3)
        vhat[zero] = var_floor
    return vhat


def _log_variance_path(eta: np.ndarray, rho: float, vhat: np.ndarray,
                       defined: np.ndarray) -> np.ndarray:
    """Recursive log-variance trajectory around the circular day index.

    eta is the linear predictor per day; the feedback term uses the previous
    day's observed-minus-modeled variance, with day 0 identified with day 365
    and the wrapped value initialized at its observed variance.  Days without
    an observed variance contribute a zero innovation.

    The recursion is clipped at +-40 on the log scale: the raw-variance
    feedback inside an exponential diverges once |rho| * variance exceeds 1,
    and the clip keeps the squared-error objective finite (and terrible) in
    that regime so the feedback search steers away from it.
    """
    logvar = np.empty(DAYS_PER_YEAR)
    prev_model = vhat[-1] if defined[-1] else np.exp(min(eta[-1], 40.0))
    prev_obs = vhat[-1]
    prev_def = defined[-1]
    for i in range(DAYS_PER_YEAR):
        innov = rho * (prev_obs - prev_model) if prev_def else 0.0
        logvar[i] = min(max(eta[i] + innov, -40.0), 40.0)
        prev_model = np.exp(logvar[i])
        prev_obs = vhat[i]
        prev_def = defined[i]
    return logvar


def fit_variance_model(
    stats: InterAnnualStats,
    k: int = 4,
    rho_bounds: tuple[float, float] = (-0.99, 0.99),
    tol: float = 1e-10,
    max_iter: int = 100,
    var_floor: float = _VAR_FLOOR,
) -> VarianceParams:
    """Least squares on the log scale with a safeguarded alternating scheme.

    Alternates (a) a bounded 1-D search over the feedback coefficient with
    the exact recursive objective and (b) a linear refit of the remaining
    coefficients against the innovation-adjusted response.  Steps are only
    accepted when they decrease the exact objective, so the objective is
    non-increasing by construction; iteration stops once the improvement
    falls below ``tol``.
    """
    X, usable = _design(stats, k)
    fit_days = stats.defined
    if int(fit_days.sum()) < 2 * k + 4:
        raise InsufficientDataError(f"need at least {2 * k + 4} days with a defined variance")
    vhat = _floored_var(stats, var_floor)
    z = np.where(fit_days, np.log(np.where(fit_days, vhat, 1.0)), 0.0)

    Xu = X[:, usable]

    def objective(coef_u: np.ndarray, rho: float) -> tuple[float, np.ndarray]:
        eta = Xu @ coef_u
        logvar = _log_variance_path(eta, rho, vhat, fit_days)
        err = (z - logvar)[fit_days]
        return float(err @ err), logvar

    coef_u, *_ = np.linalg.lstsq(Xu[fit_days], z[fit_days], rcond=None)
    rho = 0.0
    obj, logvar = objective(coef_u, rho)

    for _ in range(max_iter):
        improved = False

        res = minimize_scalar(lambda r: objective(coef_u, r)[0],
                              bounds=rho_bounds, method="bounded",
                              options={"xatol": 1e-10})
        cand_obj, cand_path = objective(coef_u, float(res.x))
        if cand_obj < obj - tol:
            rho, obj, logvar = float(res.x), cand_obj, cand_path
            improved = True

        # Linear refit against the feedback term implied by the current path.
        feedback = logvar - Xu @ coef_u
        cand_coef, *_ = np.linalg.lstsq(Xu[fit_days], (z - feedback)[fit_days], rcond=None)
        cand_obj, cand_path = objective(cand_coef, rho)
        if cand_obj < obj - tol:
            coef_u, obj, logvar = cand_coef, cand_obj, cand_path
            improved = True

        if not improved:
            break

    coef = np.zeros(X.shape[1])
    coef[usable] = coef_u
    return VarianceParams(
        beta0=float(coef[0]),
        beta1=float(coef[1]),
        beta2=float(coef[2]),
        fourier=FourierCoeffs(a=coef[3 : 3 + k], b=coef[3 + k : 3 + 2 * k]),
        rho1=rho,
    )


def predict_sigma(params: VarianceParams, stats: InterAnnualStats,
                  var_floor: float = _VAR_FLOOR) -> np.ndarray:
    """Seasonal standard deviation sigma_d implied by fitted parameters.

    The feedback term is evaluated along the fitted trajectory, so the
    output is strictly positive for any finite parameters.
    """
    k = params.fourier.k
    d = np.arange(1, DAYS_PER_YEAR + 1)
    mu = np.where(np.isfinite(stats.mu_hat), stats.mu_hat, 0.0)
    eta = (params.beta0 + params.beta1 * mu + params.beta2 * mu**2
           + fourier_design_row(d, k) @ params.fourier.as_vector())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroVarianceWarning)
        vhat = _floored_var(stats, var_floor)
    logvar = _log_variance_path(eta, params.rho1, vhat, stats.defined)
    return np.exp(0.5 * logvar)


class SeasonalVarianceModel(BaseEstimator):
    """Estimator facade: fit the seasonal variance model, predict sigma_d."""

    def __init__(self, k: int = 4, rho_bounds: tuple[float, float] = (-0.99, 0.99),
                 tol: float = 1e-10, max_iter: int = 100, var_floor: float = _VAR_FLOOR):
        self.k = k
        self.rho_bounds = rho_bounds
        self.tol = tol
        self.max_iter = max_iter
        self.var_floor = var_floor

    def fit(self, data: StationSeries | InterAnnualStats):
        stats = interannual_stats(data) if isinstance(data, StationSeries) else data
        self.stats_ = stats
        self.params_ = fit_variance_model(stats, k=self.k, rho_bounds=self.rho_bounds,
                                          tol=self.tol, max_iter=self.max_iter,
                                          var_floor=self.var_floor)
        self.sigma_ = predict_sigma(self.params_, stats, self.var_floor)
        return self

    def predict(self, stats: InterAnnualStats | None = None) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise RuntimeError("call fit() first")
        if stats is None:
            return self.sigma_
        return predict_sigma(self.params_, stats, self.var_floor)

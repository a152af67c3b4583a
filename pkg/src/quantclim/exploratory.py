"""Parametric mean model and residual diagnostics.

This module exists to demonstrate the heteroskedasticity that motivates the
variance and quantile models: a station's daily series is fit with intercept
+ linear trend + covariates + seasonal harmonics + lagged-residual terms, and
the residuals / squared residuals are examined through their ACF and their
day-of-year sample variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .harmonics import FourierCoeffs, fourier_design_row
from .stations import DAYS_PER_YEAR, CovariateSeries, StationSeries, time_index

_DEFAULT_MAX_LAG = 800


class SingularDesignError(ValueError):
    """The regression design is rank deficient."""


class DegenerateSeriesError(ValueError):
    """The input series carries no usable variation."""


@dataclass
class MeanModelFit:
    """Fitted mean model for one station.

    ``residuals`` and ``fitted`` are aligned to the observed days (whose
    day-of-year and normalized time are carried alongside); observations are
    reproduced exactly as fitted + residuals.
    """

    intercept: float
    trend: float
    covariate_coeffs: np.ndarray
    fourier: FourierCoeffs
    ar_coeffs: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    day_of_year: np.ndarray
    t_norm: np.ndarray
    resid_sd: float
    n_iterations: int
    column_names: tuple[str, ...]


@dataclass
class HeterogeneityReport:
    """CSV-ready diagnostic columns from a mean-model fit."""

    lags: np.ndarray
    acf_resid: np.ndarray
    acf_resid_sq: np.ndarray
    day_of_year: np.ndarray
    resid_var_by_day: np.ndarray


def _check_rank(X: np.ndarray, names) -> None:
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        # Greedy scan: a column already spanned by those before it is the culprit.
        bad = []
        for j in range(1, X.shape[1] + 1):
            if np.linalg.matrix_rank(X[:, :j]) < j - len(bad):
                bad.append(names[j - 1])
        raise SingularDesignError(f"design is rank deficient; collinear columns: {bad}")


def fit_mean_model(
    series: StationSeries,
    covariates: list[CovariateSeries] | None = None,
    k: int = 4,
    p: int = 1,
    window: tuple[int, int] | None = None,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> MeanModelFit:
    """Least-squares mean model with iteratively refit lagged-residual terms.

    The base design holds intercept, normalized-time trend, covariates and
    order-k harmonics.  For p > 0 the fit alternates between computing base
    residuals and re-estimating with p lagged residuals appended as
    regressors, until coefficients move less than ``tol``.  Lagged values that
    would cross a masked gap are treated as unavailable (zeroed).
    """
    covariates = covariates or []
    ti = time_index(series, window)
    obs = series.mask.ravel()
    y = series.values.ravel()[obs]
    t = ti.t_norm[obs]
    d = ti.d[obs]
    t_raw = ti.t_raw[obs]

    n_param = 2 + len(covariates) + 2 * k + p
    if y.size < 10 * max(n_param, 1):
        raise DegenerateSeriesError(
            f"need at least {10 * n_param} observed days for {n_param} parameters, have {y.size}"
        )

    names = ["const", "t"] + [c.name for c in covariates]
    cols = [np.ones_like(t), t]
    for cov in covariates:
        cols.append(cov.aligned_to(series).ravel()[obs])
    X = np.column_stack(cols)
    if k > 0:
        X = np.hstack([X, fourier_design_row(d, k)])
        names += [f"sin{j}" for j in range(1, k + 1)] + [f"cos{j}" for j in range(1, k + 1)]
    _check_rank(X, names)

    n_main = X.shape[1]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    n_iterations = 0

    if p > 0:
        # Row index of each raw day, for locating lagged observations.
        row_of = {int(tr): i for i, tr in enumerate(t_raw)}
        lag_src = np.full((y.size, p), -1, dtype=int)
        for i, tr in enumerate(t_raw):
            for j in range(p):
                lag_src[i, j] = row_of.get(int(tr) - (j + 1), -1)
        has_lag = lag_src >= 0

        coef = np.concatenate([coef, np.zeros(p)])
        for n_iterations in range(1, max_iter + 1):
            base_resid = y - X @ coef[:n_main]
            lag_cols = np.where(has_lag, base_resid[np.clip(lag_src, 0, None)], 0.0)
            Xa = np.hstack([X, lag_cols])
            new_coef, *_ = np.linalg.lstsq(Xa, y, rcond=None)
            if np.max(np.abs(new_coef - coef)) < tol:
                coef = new_coef
                break
            coef = new_coef
        base_resid = y - X @ coef[:n_main]
        lag_cols = np.where(has_lag, base_resid[np.clip(lag_src, 0, None)], 0.0)
        fitted = X @ coef[:n_main] + lag_cols @ coef[n_main:]
    else:
        fitted = X @ coef

    residuals = y - fitted
    n_cov = len(covariates)
    return MeanModelFit(
        intercept=float(coef[0]),
        trend=float(coef[1]),
        covariate_coeffs=coef[2 : 2 + n_cov].copy(),
        fourier=FourierCoeffs(a=coef[2 + n_cov : 2 + n_cov + k],
                              b=coef[2 + n_cov + k : 2 + n_cov + 2 * k])
        if k > 0 else FourierCoeffs.zeros(0),
        ar_coeffs=coef[n_main:].copy(),
        residuals=residuals,
        fitted=fitted,
        day_of_year=d,
        t_norm=t,
        resid_sd=float(np.std(residuals, ddof=1)) if residuals.size > 1 else 0.0,
        n_iterations=n_iterations,
        column_names=tuple(names + [f"ar{j}" for j in range(1, p + 1)]),
    )


def acf(x, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag with the common 1/n scaling."""
    x = np.asarray(x, dtype=float)
    if x.size <= max_lag:
        raise ValueError(f"need more than {max_lag} points, have {x.size}")
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0.0:
        raise DegenerateSeriesError("zero-variance input has no autocorrelation")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = float(xc[:-h] @ xc[h:]) / denom
    return out


def heterogeneity_report(fit: MeanModelFit, max_lag: int = _DEFAULT_MAX_LAG) -> HeterogeneityReport:
    """ACF of residuals and squared residuals plus per-day residual variance."""
    r = fit.residuals
    days = np.arange(1, DAYS_PER_YEAR + 1)
    var_by_day = np.full(DAYS_PER_YEAR, np.nan)
    for d in days:
        sel = r[fit.day_of_year == d]
        if sel.size >= 2:
            var_by_day[d - 1] = float(np.var(sel, ddof=1))
    return HeterogeneityReport(
        lags=np.arange(max_lag + 1),
        acf_resid=acf(r, max_lag),
        acf_resid_sq=acf(r**2, max_lag),
        day_of_year=days,
        resid_var_by_day=var_by_day,
    )


class SeasonalMeanModel(BaseEstimator):
    """Estimator facade over :func:`fit_mean_model`.

    Parameters mirror the function; after ``fit`` the result is available as
    ``fit_`` with convenience attributes ``intercept_`` and ``trend_``.
    """

    def __init__(self, k: int = 4, ar_order: int = 1,
                 window: tuple[int, int] | None = None,
                 tol: float = 1e-8, max_iter: int = 50):
        self.k = k
        self.ar_order = ar_order
        self.window = window
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, series: StationSeries, covariates: list[CovariateSeries] | None = None):
        self.fit_ = fit_mean_model(series, covariates, k=self.k, p=self.ar_order,
                                   window=self.window, tol=self.tol, max_iter=self.max_iter)
        self.intercept_ = self.fit_.intercept
        self.trend_ = self.fit_.trend
        return self

    def diagnostics(self, max_lag: int = _DEFAULT_MAX_LAG) -> HeterogeneityReport:
        if not hasattr(self, "fit_"):
            raise RuntimeError("call fit() before diagnostics()")
        return heterogeneity_report(self.fit_, max_lag)

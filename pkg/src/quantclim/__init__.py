"""quantclim: heterogeneity-aware quantile trends for daily temperature series.

The package models a station network's daily maxima/minima with a seasonal
variance model and a piecewise-Gaussian quantile process whose coefficients
vary spatially as Gaussian processes; inference is Metropolis-within-Gibbs.
High-level entry points are the three estimators below and the ``quantclim``
command line.
"""

from .basis import (
    CovariateBox,
    KnotGrid,
    ModelForm,
    ModelSpec,
    PiecewiseQuantile,
    QuantileCoeffs,
    basis_eval,
    check_positive_scales,
    density_eval,
    piecewise_params,
    quantile_eval,
    sample_one,
)
from .exploratory import SeasonalMeanModel, acf, fit_mean_model, heterogeneity_report
from .harmonics import FourierCoeffs, fourier_design_row, fourier_eval
from .mcmc import (
    ChainConfig,
    ChainState,
    LatentCopula,
    PosteriorSample,
    PosteriorSummary,
    QuantileGibbsSampler,
    SpatioTemporalQuantileModel,
    TrendSummary,
    build_dataset,
    log_likelihood,
    posterior_quantiles,
    run_chain,
    simulate_latent,
    trend_summary,
)
from .simulate import (
    ComparisonTable,
    SimScenario,
    demo_scenario,
    generate_series,
    pilot_run,
    run_comparison,
    scenario_from_coeffs,
)
from .spatial import GPField, GPHyperParams, HyperPrior, exp_cov_matrix, gp_logpdf, gp_sample
from .stations import (
    CovariateSeries,
    StationMeta,
    StationSeries,
    drop_leap_days,
    filter_stations,
    load_station_csv,
    time_index,
)
from .variance import (
    InterAnnualStats,
    SeasonalVarianceModel,
    VarianceParams,
    fit_variance_model,
    interannual_stats,
    predict_sigma,
)

__version__ = "0.1.0"

__all__ = [
    "CovariateBox", "KnotGrid", "ModelForm", "ModelSpec", "PiecewiseQuantile",
    "QuantileCoeffs", "basis_eval", "check_positive_scales", "density_eval",
    "piecewise_params", "quantile_eval", "sample_one",
    "SeasonalMeanModel", "acf", "fit_mean_model", "heterogeneity_report",
    "FourierCoeffs", "fourier_design_row", "fourier_eval",
    "ChainConfig", "ChainState", "LatentCopula", "PosteriorSample",
    "PosteriorSummary", "QuantileGibbsSampler", "SpatioTemporalQuantileModel",
    "TrendSummary", "build_dataset", "log_likelihood", "posterior_quantiles",
    "run_chain", "simulate_latent", "trend_summary",
    "ComparisonTable", "SimScenario", "demo_scenario", "generate_series",
    "pilot_run", "run_comparison", "scenario_from_coeffs",
    "GPField", "GPHyperParams", "HyperPrior", "exp_cov_matrix", "gp_logpdf", "gp_sample",
    "CovariateSeries", "StationMeta", "StationSeries", "drop_leap_days",
    "filter_stations", "load_station_csv", "time_index",
    "InterAnnualStats", "SeasonalVarianceModel", "VarianceParams",
    "fit_variance_model", "interannual_stats", "predict_sigma",
]

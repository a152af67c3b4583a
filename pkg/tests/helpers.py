"""Shared fixture builders used by module tests and the acceptance suite."""

import numpy as np

from quantclim.basis import ModelForm, ModelSpec, QuantileCoeffs
from quantclim.harmonics import FourierCoeffs, fourier_design_row
from quantclim.stations import DAYS_PER_YEAR, StationMeta, StationSeries
from quantclim.variance import InterAnnualStats, VarianceParams


def variance_truth():
    """Generating parameters for the variance-model recovery experiments.

    The scales sit inside the feedback recursion's stable region
    (|rho| * max variance < 1) and the day-of-year mean curve carries a
    rough sampling wiggle, as real inter-annual means do.
    """
    params = VarianceParams(
        beta0=-2.0, beta1=0.17, beta2=-0.003,
        fourier=FourierCoeffs(a=[0.25, -0.12, 0.06, 0.04], b=[0.3, 0.15, -0.08, 0.05]),
        rho1=0.3,
    )
    d = np.arange(1, DAYS_PER_YEAR + 1)
    wiggle = np.random.default_rng(2024).normal(0, 2.0, size=DAYS_PER_YEAR)
    mu = 20 + 5 * np.cos(2 * np.pi * d / 365) + 1.2 * np.sin(2 * np.pi * 5 * d / 365) + wiggle
    return params, mu


def variance_eta(params: VarianceParams, mu: np.ndarray) -> np.ndarray:
    d = np.arange(1, DAYS_PER_YEAR + 1)
    return (params.beta0 + params.beta1 * mu + params.beta2 * mu**2
            + fourier_design_row(d, params.fourier.k) @ params.fourier.as_vector())


def generate_variance_data(params: VarianceParams, mu: np.ndarray, noise_sd: float,
                           rng: np.random.Generator | None, rho: float | None = None,
                           sweeps: int = 4) -> InterAnnualStats:
    """Independent generator loop for the seasonal variance recursion.

    Runs stabilization sweeps with fresh noise; the final sweep is the
    observed year.  With ``noise_sd=0`` the output equals the noiseless
    model trajectory exactly.
    """
    eta = variance_eta(params, mu)
    rho = params.rho1 if rho is None else rho
    prev_model = np.exp(eta[-1])
    prev_obs = prev_model
    vhat = np.empty(DAYS_PER_YEAR)
    for _ in range(sweeps):
        noise = (rng.normal(0, noise_sd, size=DAYS_PER_YEAR)
                 if noise_sd > 0 else np.zeros(DAYS_PER_YEAR))
        for i in range(DAYS_PER_YEAR):
            level = eta[i] + rho * (prev_obs - prev_model)
            prev_model = np.exp(level)
            vhat[i] = np.exp(level + noise[i])
            prev_obs = vhat[i]
    return InterAnnualStats(mu_hat=mu, var_hat=vhat,
                            n_obs=np.full(DAYS_PER_YEAR, 60))


def station_grid(n_stations: int) -> list[StationMeta]:
    """Stations spread over a continental-scale box (weak prior coupling)."""
    lats = np.linspace(-43.0, -11.0, max(n_stations, 2))
    lons = np.linspace(114.0, 153.0, max(n_stations, 2))
    return [StationMeta(station_id=f"F{i:02d}", lat=float(lats[i]), lon=float(lons[i]))
            for i in range(n_stations)]


def recovery_coeffs(spec: ModelSpec, rng: np.random.Generator, trend: float,
                    base: float = 20.0):
    """One station's generating coefficients for posterior-recovery fixtures."""
    betas = np.zeros(spec.n_beta)
    betas[0] = base + rng.uniform(-1, 1)
    betas[1] = trend
    betas[spec.beta_slots.index("sin1")] = 2.5
    betas[spec.beta_slots.index("cos1")] = 4.0
    thetas = np.zeros((spec.n_pieces, spec.n_theta))
    thetas[:, spec.theta_slots.index("sigma")] = rng.uniform(0.9, 1.1, size=spec.n_pieces)
    thetas[:, spec.theta_slots.index("t")] = rng.uniform(-0.1, 0.2, size=spec.n_pieces)
    return QuantileCoeffs(betas, thetas, spec)


def synthetic_network(n_stations: int, years: int, trends, seed: int, k: int = 2,
                      sigma_base: float = 0.5):
    """Exact model samples for a small network; returns (series, sigma_d, coeffs).

    Observations are drawn as y = q(u) with independent uniform levels, the
    exact sampling model of the quantile process with the copula disabled.
    """
    from quantclim.simulate import sample_path

    spec = ModelSpec(form=ModelForm.REDUCED_SIGMA, n_pieces=4, k=k, include_soi=False)
    metas = station_grid(n_stations)
    rng = np.random.default_rng(seed)
    d = np.tile(np.arange(1, DAYS_PER_YEAR + 1), years)
    n = years * DAYS_PER_YEAR
    t_norm = (np.arange(1, n + 1) - 1.0) / (n - 1.0)
    series_list, sigma_d, coeffs_list = [], {}, []
    for s, meta in enumerate(metas):
        sd_curve = sigma_base * (1.0 + 0.35 * np.cos(2 * np.pi * np.arange(1, 366) / 365))
        sigma_d[meta.station_id] = sd_curve
        coeffs = recovery_coeffs(spec, rng, trend=trends[s])
        coeffs_list.append(coeffs)
        u = rng.uniform(size=n)
        y = sample_path(coeffs, t_norm, d, 0.0, sd_curve[d - 1], u)
        series_list.append(StationSeries(
            meta=meta, start_year=2000, end_year=2000 + years - 1,
            values=y.reshape(years, DAYS_PER_YEAR),
            mask=np.ones((years, DAYS_PER_YEAR), dtype=bool)))
    return series_list, sigma_d, coeffs_list, spec

"""Command-line surface: ingest, explore, fit-variance, fit, simulate, report.

Every command reads a key=value config file, honors a few overriding flags,
and writes plain CSV (plus GeoJSON for the map layer) into the configured
output directory.  Seeded runs are byte-reproducible.

Exit codes: 0 success, 1 model/runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .basis import ModelForm, ModelSpec
from .config import ConfigError, RunConfig
from .exploratory import fit_mean_model, heterogeneity_report
from .mcmc import ChainConfig, build_dataset, run_chain
from .simulate import demo_scenario, run_comparison
from .stations import (
    StationSeries,
    drop_leap_days,
    filter_stations,
    load_covariate_csv,
    load_metadata_csv,
    load_station_csv,
    season_days,
)
from .variance import fit_variance_model, interannual_stats, predict_sigma

logger = logging.getLogger("quantclim")

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class CliError(RuntimeError):
    def __init__(self, message: str, code: int = RUNTIME_ERROR):
        super().__init__(message)
        self.code = code


def per_decade(trend_on_unit_time: float, study_years: int) -> float:
    """Convert a trend per unit normalized study time to degC per decade."""
    if study_years <= 0:
        raise ValueError("study_years must be positive")
    return trend_on_unit_time * 10.0 / study_years


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            # cast numpy scalars so repr stays the plain shortest round-trip form
            writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _load_stations(config: RunConfig, station_filter: list[str] | None = None) -> list[StationSeries]:
    data_dir = Path(config.data_dir)
    if not data_dir.is_dir():
        raise CliError(f"data_dir does not exist: {data_dir}", USAGE_ERROR)
    meta_by_id = {}
    if config.metadata_csv:
        meta_path = Path(config.metadata_csv)
        if not meta_path.exists():
            raise CliError(f"metadata_csv does not exist: {meta_path}", USAGE_ERROR)
        meta_by_id = load_metadata_csv(meta_path)
    series_list = []
    for path in sorted(data_dir.glob("*.csv")):
        series = drop_leap_days(load_station_csv(path, variable=config.variable))
        sid = series.meta.station_id
        if station_filter and sid not in station_filter:
            continue
        if sid in meta_by_id:
            series.meta = meta_by_id[sid]
        series_list.append(series)
    if not series_list:
        raise CliError(f"no station CSVs found under {data_dir}", USAGE_ERROR)
    return series_list


def _filtered_stations(config: RunConfig, station_filter=None) -> list[StationSeries]:
    series_list = _load_stations(config, station_filter)
    kept = filter_stations(series_list, config.max_missing, config.study_window,
                           missing_over_window=config.missing_over_window)
    if not kept:
        raise CliError(
            f"no stations pass the filters (max_missing={config.max_missing}, "
            f"window={config.study_window})")
    return kept


def cmd_ingest(config: RunConfig, args) -> int:
    series_list = _load_stations(config, args.stations)
    kept_ids = {s.meta.station_id
                for s in filter_stations(series_list, config.max_missing, config.study_window,
                                         missing_over_window=config.missing_over_window)}
    rows = []
    for s in series_list:
        span = s.observed_year_span()
        rows.append([
            s.meta.station_id, repr(s.meta.lat), repr(s.meta.lon), s.meta.state or "",
            span[0] if span else "", span[1] if span else "",
            s.observed_count(),
            repr(s.missing_fraction(config.study_window if config.missing_over_window else None)),
            int(s.meta.station_id in kept_ids),
        ])
    out = _out_dir(config)
    _write_csv(out / "manifest.csv",
               ["station_id", "lat", "lon", "state", "first_year", "last_year",
                "n_obs", "missing_frac", "retained"], rows)
    if not kept_ids:
        raise CliError("zero stations retained after filtering; see manifest.csv")
    logger.info("ingest: %d of %d stations retained", len(kept_ids), len(series_list))
    return 0


def cmd_explore(config: RunConfig, args) -> int:
    kept = _filtered_stations(config, args.stations)
    out = _out_dir(config)
    failures = 0
    for series in kept:
        sid = series.meta.station_id
        try:
            fit = fit_mean_model(series, covariates=None, k=config.k, p=1,
                                 window=config.study_window)
            # short records cannot support the full default lag range
            max_lag = min(config.lag_max, fit.residuals.size - 1)
            report = heterogeneity_report(fit, max_lag=max_lag)
        except Exception as exc:  # keep going on per-station failures
            logger.warning("explore: station %s failed: %s", sid, exc)
            failures += 1
            continue
        terms = list(fit.column_names)
        values = ([fit.intercept, fit.trend] + list(fit.covariate_coeffs)
                  + list(fit.fourier.as_vector()) + list(fit.ar_coeffs))
        _write_csv(out / f"explore_{sid}_fit.csv", ["term", "estimate"],
                   [[t, repr(float(v))] for t, v in zip(terms, values)]
                   + [["resid_sd", repr(fit.resid_sd)]])
        _write_csv(out / f"explore_{sid}_acf.csv", ["lag", "acf_resid", "acf_resid_sq"],
                   zip(report.lags.tolist(), map(float, report.acf_resid),
                       map(float, report.acf_resid_sq)))
        stats = interannual_stats(series)
        _write_csv(out / f"explore_{sid}_doy.csv",
                   ["d", "sample_mean", "sample_var", "resid_var"],
                   zip(report.day_of_year.tolist(), map(float, stats.mu_hat),
                       map(float, stats.var_hat), map(float, report.resid_var_by_day)))
    if failures == len(kept):
        raise CliError("exploratory analysis failed for every station")
    return 0


def _variance_fits(config: RunConfig, kept: list[StationSeries]):
    sigma_d, params = {}, {}
    for series in kept:
        stats = interannual_stats(series)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_variance_model(stats, k=4)
        sigma_d[series.meta.station_id] = predict_sigma(fit, stats)
        params[series.meta.station_id] = (stats, fit)
    return sigma_d, params


def cmd_fit_variance(config: RunConfig, args) -> int:
    kept = _filtered_stations(config, args.stations)
    out = _out_dir(config)
    sigma_d, params = _variance_fits(config, kept)
    rows = []
    for series in kept:
        sid = series.meta.station_id
        stats, fit = params[sid]
        _write_csv(out / f"variance_{sid}.csv", ["d", "mu_hat", "var_hat", "sigma_fit"],
                   zip(range(1, 366), map(float, stats.mu_hat), map(float, stats.var_hat),
                       map(float, sigma_d[sid])))
        rows.append([sid, repr(fit.beta0), repr(fit.beta1), repr(fit.beta2)]
                    + [repr(float(v)) for v in fit.fourier.as_vector()]
                    + [repr(fit.rho1)])
    k = 4
    header = (["station_id", "beta0", "beta1", "beta2"]
              + [f"sin{j}" for j in range(1, k + 1)] + [f"cos{j}" for j in range(1, k + 1)]
              + ["rho1"])
    _write_csv(out / "variance_params.csv", header, rows)
    return 0


def cmd_fit(config: RunConfig, args) -> int:
    kept = _filtered_stations(config, args.stations)
    out = _out_dir(config)
    sigma_d, _ = _variance_fits(config, kept)

    soi = None
    include_soi = bool(config.soi_csv)
    if include_soi:
        soi = load_covariate_csv(config.soi_csv, "soi", config.study_start, config.study_end)
    k = 1 if config.season != "all" else config.k  # within-season seasonality is mild
    spec = ModelSpec(form=ModelForm(config.model_form), n_pieces=config.pieces, k=k,
                     include_soi=include_soi)
    day_set = season_days(config.season) if config.season != "all" else None
    dataset = build_dataset(kept, spec,
                            sigma_d=sigma_d if spec.form is ModelForm.REDUCED_SIGMA else None,
                            soi=soi, window=config.study_window, season_day_set=day_set)
    chain_cfg = ChainConfig(n_iter=config.n_iter, n_burn=config.n_burn, thin=config.thin,
                            seed=config.seed, target_accept=config.target_accept)
    result = run_chain(dataset, chain_cfg, copula=config.copula, tau_grid=config.tau_grid)

    # posterior draws of the coefficient fields
    sample_rows = []
    for smp in result.samples:
        for s, sid in enumerate(dataset.station_ids):
            for j, slot in enumerate(spec.beta_slots):
                sample_rows.append([smp.iteration, sid, slot, "", repr(float(smp.betas[s, j]))])
            for l in range(spec.n_pieces):
                for j, slot in enumerate(spec.theta_slots):
                    sample_rows.append([smp.iteration, sid, slot, l + 1,
                                        repr(float(smp.thetas[s, l, j]))])
    _write_csv(out / "samples.csv", ["iter", "station_id", "slot", "l", "value"], sample_rows)

    coef_blocks = [name for name in result.summary.acceptance
                   if name.startswith(("beta:", "theta:"))]
    mean_accept = float(np.mean([result.summary.acceptance[b] for b in coef_blocks]))
    trend = result.summary.trend
    rows = []
    for s, sid in enumerate(dataset.station_ids):
        for j, tau in enumerate(trend.tau):
            rows.append([sid, repr(float(tau)), repr(float(trend.mean[s, j])),
                         repr(float(trend.lower[s, j])), repr(float(trend.upper[s, j])),
                         repr(mean_accept)])
    _write_csv(out / "summary.csv",
               ["station_id", "tau", "g1_mean", "g1_lo", "g1_hi", "accept_rate_block"], rows)
    _write_csv(out / "acceptance.csv", ["block", "rate"],
               [[name, repr(float(rate))] for name, rate in sorted(result.summary.acceptance.items())])
    _write_csv(out / "stations.csv", ["station_id", "lat", "lon"],
               [[s.meta.station_id, repr(s.meta.lat), repr(s.meta.lon)] for s in kept])
    return 0


def cmd_simulate(config: RunConfig, args) -> int:
    scenario = demo_scenario(n_stations=config.sim_stations, years=config.sim_years,
                             replicates=config.sim_replicates, seed=config.seed)
    chain_cfg = ChainConfig(n_iter=config.sim_n_iter, n_burn=config.sim_n_burn,
                            thin=config.sim_thin, seed=config.seed,
                            target_accept=config.target_accept)
    table = run_comparison(scenario, chain_cfg, k=config.sim_k, n_pieces=config.pieces)
    out = _out_dir(config)
    table.write_csv(out / "comparison.csv")
    logger.info("simulate: total RMSE %0.3f (no sigma) vs %0.3f (sigma)",
                table.total_rmse_no_sigma, table.total_rmse_sigma)
    return 0


def cmd_report(config: RunConfig, args) -> int:
    out = _out_dir(config)
    summary_path = out / "summary.csv"
    stations_path = out / "stations.csv"
    if not summary_path.exists() or not stations_path.exists():
        raise CliError(f"missing fit outputs in {out}; run the fit command first", USAGE_ERROR)

    coords = {}
    with stations_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            coords[row["station_id"]] = (float(row["lat"]), float(row["lon"]))

    records = []
    with summary_path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            records.append((row["station_id"], float(row["tau"]), float(row["g1_mean"]),
                            float(row["g1_lo"]), float(row["g1_hi"])))

    years = config.study_years
    trend_rows = [[sid, repr(tau), repr(per_decade(mean, years)),
                   repr(per_decade(lo, years)), repr(per_decade(hi, years))]
                  for sid, tau, mean, lo, hi in records]
    _write_csv(out / "trends.csv",
               ["station_id", "tau", "trend_per_decade", "lo_per_decade", "hi_per_decade"],
               trend_rows)

    by_station: dict[str, list] = {}
    for sid, tau, mean, lo, hi in records:
        by_station.setdefault(sid, []).append((tau, per_decade(mean, years)))

    features = []
    for sid in sorted(by_station):
        lat, lon = coords.get(sid, (None, None))
        if lat is None:
            logger.warning("report: no coordinates for station %s", sid)
            continue
        props = {"station_id": sid}
        for tau, value in sorted(by_station[sid]):
            props[f"trend_per_decade_q{tau:g}"] = value
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": props,
        })
    geojson = {"type": "FeatureCollection", "features": features}
    (out / "trends.geojson").write_text(json.dumps(geojson, sort_keys=True, indent=2))

    # quantile-level curves for stations whose trend exceeds the threshold anywhere
    threshold = config.trend_curve_threshold
    curve_rows = []
    for sid in sorted(by_station):
        values = by_station[sid]
        if any(v > threshold for _, v in values):
            curve_rows.extend([[sid, repr(tau), repr(v)] for tau, v in sorted(values)])
    _write_csv(out / "trend_curves.csv", ["station_id", "tau", "trend_per_decade"], curve_rows)
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "explore": cmd_explore,
    "fit-variance": cmd_fit_variance,
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantclim",
        description="Spatio-temporal quantile trends for daily temperature series")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--stations", type=lambda s: s.split(","), default=None,
                       help="comma-separated station ids to keep")
        p.add_argument("--season", choices=["all", "djf", "jja"], default=None)
        p.add_argument("--tau", type=lambda s: tuple(float(x) for x in s.split(",")),
                       default=None, help="comma-separated quantile levels")
        p.add_argument("--max-missing", type=float, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        config = RunConfig.from_file(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.season is not None:
            config.season = args.season
        if args.tau is not None:
            config.tau_grid = args.tau
        if args.max_missing is not None:
            config.max_missing = args.max_missing
        config.__post_init__()  # re-validate overrides
        return _COMMANDS[args.command](config, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())

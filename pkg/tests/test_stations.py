import datetime as dt

import numpy as np
import pytest

from quantclim.stations import (
    DegenerateSpanError,
    StationDataError,
    StationMeta,
    StationSeries,
    day_of_year_365,
    drop_leap_days,
    filter_stations,
    load_covariate_csv,
    load_station_csv,
    normalized_time,
    season_days,
    time_index,
)


def make_series(years=2, start_year=2000, missing=(), fill=15.0):
    values = np.full((years, 365), fill)
    mask = np.ones((years, 365), dtype=bool)
    for (yi, d) in missing:
        mask[yi, d - 1] = False
        values[yi, d - 1] = np.nan
    meta = StationMeta(station_id="T1", lat=-30.0, lon=140.0)
    return StationSeries(meta=meta, start_year=start_year,
                         end_year=start_year + years - 1, values=values, mask=mask)


def write_year_csv(path, year, skip_days=(), include_feb29=False, station="S1"):
    lines = ["station_id,date,value"]
    date = dt.date(year, 1, 1)
    while date.year == year:
        keep = True
        if date.month == 2 and date.day == 29 and not include_feb29:
            keep = False
        d365 = day_of_year_365(date)
        if d365 in skip_days:
            keep = False
        if keep:
            lines.append(f"{station},{date.isoformat()},{10.0 + (d365 or 0) * 0.01}")
        date += dt.timedelta(days=1)
    path.write_text("\n".join(lines) + "\n")


class TestLoadStationCsv:
    def test_complete_non_leap_year_has_no_missing(self, tmp_path):
        path = tmp_path / "s1.csv"
        write_year_csv(path, 2001)
        series = load_station_csv(path)
        assert series.values.shape == (1, 365)
        assert series.mask.all()

    def test_leap_year_feb29_dropped(self, tmp_path):
        path = tmp_path / "s1.csv"
        write_year_csv(path, 2000, include_feb29=True)
        series = load_station_csv(path)
        assert series.mask.sum() == 365
        # Mar 1 of a leap year lands at day 60
        assert day_of_year_365(dt.date(2000, 3, 1)) == 60
        assert series.values[0, 59] == pytest.approx(10.0 + 60 * 0.01)

    def test_one_missing_day_masked(self, tmp_path):
        path = tmp_path / "s1.csv"
        write_year_csv(path, 2001, skip_days={100})
        series = load_station_csv(path)
        assert int((~series.mask).sum()) == 1
        assert not series.mask[0, 99]

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("station_id,date,value\nS1,2001-01-01,1.0\nS1,not-a-date,2.0\n")
        with pytest.raises(StationDataError, match="bad.csv:3"):
            load_station_csv(path)

    def test_mixed_station_ids_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("station_id,date,value\nS1,2001-01-01,1.0\nS2,2001-01-02,2.0\n")
        with pytest.raises(StationDataError, match="mixed station ids"):
            load_station_csv(path)

    def test_empty_value_is_missing(self, tmp_path):
        path = tmp_path / "s1.csv"
        path.write_text("station_id,date,value\nS1,2001-01-01,1.0\nS1,2001-01-02,\n")
        series = load_station_csv(path)
        assert series.mask[0, 0] and not series.mask[0, 1]


class TestDropLeapDays:
    def test_already_365_identity(self):
        series = make_series()
        out = drop_leap_days(series)
        np.testing.assert_array_equal(out.values, series.values)
        np.testing.assert_array_equal(out.mask, series.mask)

    def test_idempotent(self):
        series = make_series(missing=[(0, 10)])
        once = drop_leap_days(series)
        twice = drop_leap_days(once)
        np.testing.assert_array_equal(once.mask, twice.mask)

    def test_feb29_maps_to_none(self):
        assert day_of_year_365(dt.date(2000, 2, 29)) is None
        assert day_of_year_365(dt.date(2001, 12, 31)) == 365


class TestFilterStations:
    def _station_with_missing_frac(self, frac, years=2, sid="X"):
        total = years * 365
        n_missing = int(round(frac * total))
        values = np.full((years, 365), 10.0)
        mask = np.ones((years, 365), dtype=bool)
        # spread the gaps over the whole record so every year keeps data
        drop = np.random.default_rng(0).permutation(total)[:n_missing]
        mask.ravel()[drop] = False
        values.ravel()[drop] = np.nan
        meta = StationMeta(station_id=sid, lat=-25.0, lon=130.0)
        return StationSeries(meta=meta, start_year=2000, end_year=2000 + years - 1,
                             values=values, mask=mask)

    def test_over_threshold_excluded(self):
        st = self._station_with_missing_frac(0.25)
        kept = filter_stations([st], 0.20, (2000, 2001))
        assert kept == []

    def test_threshold_one_keeps_all(self):
        stations = [self._station_with_missing_frac(f, sid=f"S{f}") for f in (0.1, 0.5, 0.9)]
        assert len(filter_stations(stations, 1.0, (2000, 2001))) == 3

    def test_exact_count_against_direct_oracle(self):
        fracs = [round(0.05 * i, 2) for i in range(1, 11)]  # 0.05 .. 0.50
        stations = [self._station_with_missing_frac(f, sid=f"S{i}")
                    for i, f in enumerate(fracs)]
        kept = filter_stations(stations, 0.20, (2000, 2001))
        expected = sum(1 for f in fracs if f <= 0.20)  # direct count oracle
        assert len(kept) == expected == 4

    def test_span_requirement(self):
        st = self._station_with_missing_frac(0.0, years=2)  # 2000-2001
        assert filter_stations([st], 0.5, (1999, 2001)) == []
        assert len(filter_stations([st], 0.5, (2000, 2001))) == 1


class TestTimeIndex:
    def test_two_day_normalization_endpoints(self):
        np.testing.assert_allclose(normalized_time([1, 2], 2), [0.0, 1.0])

    def test_sixty_year_first_day_of_year31(self):
        # affine-map oracle: t_raw = 30*365 + 1 over N = 60*365 days
        expected = 30 * 365 / (60 * 365 - 1)
        series = make_series(years=60, start_year=1960)
        ti = time_index(series)
        cell = 30 * 365  # first day of the 31st year, 0-based row index
        assert ti.t_norm[cell] == pytest.approx(expected, abs=1e-15)

    def test_dec31_is_day_365(self):
        series = make_series(years=3)
        ti = time_index(series)
        assert ti.d[364] == 365 and ti.d[2 * 365 - 1] == 365

    def test_degenerate_span_raises(self):
        with pytest.raises(DegenerateSpanError):
            normalized_time([1], 1)

    def test_affine_and_increasing(self):
        series = make_series(years=4)
        ti = time_index(series)
        assert np.all(np.diff(ti.t_norm) > 0)
        # three collinear points
        i, j, k = 10, 500, 1200
        slope1 = (ti.t_norm[j] - ti.t_norm[i]) / (ti.t_raw[j] - ti.t_raw[i])
        slope2 = (ti.t_norm[k] - ti.t_norm[j]) / (ti.t_raw[k] - ti.t_raw[j])
        assert slope1 == pytest.approx(slope2, rel=1e-12)

    def test_window_normalization_shared_across_stations(self):
        series = make_series(years=2, start_year=1970)
        ti = time_index(series, window=(1960, 2019))
        n = 60 * 365
        assert ti.t_raw[0] == 10 * 365 + 1
        assert ti.t_norm[0] == pytest.approx((10 * 365) / (n - 1))


class TestInvariants:
    def test_mask_partition(self):
        series = make_series(years=3, missing=[(0, 5), (2, 300)])
        total = series.mask.sum() + (~series.mask).sum()
        assert total == 3 * 365

    def test_missing_fraction_window(self):
        series = make_series(years=2, missing=[(0, 1), (0, 2)])
        assert series.missing_fraction() == pytest.approx(2 / 730)
        # window larger than the series counts absent years as missing
        assert series.missing_fraction((1999, 2001)) == pytest.approx((365 + 2) / (3 * 365))


class TestCovariateCsv:
    def test_monthly_broadcast(self, tmp_path):
        path = tmp_path / "cov.csv"
        lines = ["date,value"]
        for year in (2000, 2001):
            for month in range(1, 13):
                lines.append(f"{year}-{month:02d}-01,{month * 1.0}")
        path.write_text("\n".join(lines) + "\n")
        cov = load_covariate_csv(path, "soi", 2000, 2001)
        assert cov.values.shape == (2, 365)
        assert np.all(cov.values[0, :31] == 1.0)  # January
        assert np.all(cov.values[1, 334:] == 12.0)  # December

    def test_uncovered_days_rejected(self, tmp_path):
        path = tmp_path / "cov.csv"
        path.write_text("date,value\n2000-01-01,1.0\n")
        with pytest.raises(StationDataError, match="uncovered"):
            load_covariate_csv(path, "soi", 2000, 2000)


class TestSeasonDays:
    def test_summer_and_winter_definitions(self):
        djf = season_days("djf")
        jja = season_days("jja")
        assert djf.min() == 1 and djf.max() == 365
        assert len(djf) == 31 + 31 + 28  # Dec + Jan + Feb
        assert jja[0] == 152 and jja[-1] == 243  # Jun 1 .. Aug 31
        assert len(season_days("all")) == 365

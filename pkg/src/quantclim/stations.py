"""Station records on a fixed 365-day calendar.

Daily series are stored as a (years x 365) matrix plus an observed-mask of
the same shape.  February 29 is removed on ingestion so that every year has
exactly 365 days; missing days stay masked and are never imputed here.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365

# Cumulative day counts of a non-leap year; indexing with (month-1) gives the
# day-of-year offset of the first day of each month.
_MONTH_OFFSET = np.concatenate(([0], np.cumsum([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30])))


class StationDataError(ValueError):
    """A station file or record violates the expected schema."""


class DegenerateSpanError(ValueError):
    """A time axis is too short to be normalized onto [0, 1]."""


@dataclass(frozen=True)
class StationMeta:
    """Identity and coordinates of one weather station."""

    station_id: str
    lat: float
    lon: float
    elevation: float | None = None
    state: str | None = None

    def __post_init__(self):
        if not (np.isfinite(self.lat) and np.isfinite(self.lon)):
            raise ValueError(f"station {self.station_id!r} has non-finite coordinates")


@dataclass
class StationSeries:
    """One station's daily observations on the 365-day calendar.

    ``values`` is indexed ``[year_index, day_of_year - 1]``; ``mask`` is True
    where a value was observed.  Masked cells carry NaN.
    """

    meta: StationMeta
    start_year: int
    end_year: int
    values: np.ndarray
    mask: np.ndarray
    variable: str = "Dmx"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        ny = self.end_year - self.start_year + 1
        if ny < 1:
            raise ValueError("end_year must not precede start_year")
        expected = (ny, DAYS_PER_YEAR)
        if self.values.shape != expected or self.mask.shape != expected:
            raise ValueError(
                f"series for {self.meta.station_id!r} must have shape {expected}, "
                f"got values {self.values.shape} / mask {self.mask.shape}"
            )
        if self.variable not in ("Dmx", "Dmn"):
            raise ValueError(f"variable must be 'Dmx' or 'Dmn', got {self.variable!r}")
        if not np.all(np.isfinite(self.values[self.mask])):
            raise ValueError("observed values must be finite")
        self.values = np.where(self.mask, self.values, np.nan)

    @property
    def n_years(self) -> int:
        return self.end_year - self.start_year + 1

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.start_year, self.end_year + 1)

    def observed_count(self) -> int:
        return int(self.mask.sum())

    def observed_year_span(self) -> tuple[int, int] | None:
        """First and last calendar year with at least one observation."""
        any_obs = self.mask.any(axis=1)
        if not any_obs.any():
            return None
        idx = np.flatnonzero(any_obs)
        return (self.start_year + int(idx[0]), self.start_year + int(idx[-1]))

    def missing_fraction(self, window: tuple[int, int] | None = None) -> float:
        """Fraction of unobserved days, computed over ``window`` years.

        With ``window=None`` the station's own matrix span is used.  Window
        years outside the matrix count as fully missing.
        """
        if window is None:
            window = (self.start_year, self.end_year)
        w0, w1 = int(window[0]), int(window[1])
        if w1 < w0:
            raise ValueError("window end precedes window start")
        total = (w1 - w0 + 1) * DAYS_PER_YEAR
        lo = max(w0, self.start_year) - self.start_year
        hi = min(w1, self.end_year) - self.start_year
        observed = int(self.mask[lo : hi + 1].sum()) if hi >= lo else 0
        return 1.0 - observed / total

    def restrict_days(self, keep_days: np.ndarray) -> "StationSeries":
        """Mask out all days-of-year not listed in ``keep_days`` (1-based)."""
        keep = np.zeros(DAYS_PER_YEAR, dtype=bool)
        keep[np.asarray(keep_days, dtype=int) - 1] = True
        new_mask = self.mask & keep[None, :]
        return replace(self, values=np.where(new_mask, self.values, np.nan), mask=new_mask)


@dataclass
class CovariateSeries:
    """A covariate aligned to the same (year, day) calendar as a series."""

    name: str
    start_year: int
    end_year: int
    values: np.ndarray  # (years, 365)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        ny = self.end_year - self.start_year + 1
        if self.values.shape != (ny, DAYS_PER_YEAR):
            raise ValueError(f"covariate {self.name!r} must have shape ({ny}, {DAYS_PER_YEAR})")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"covariate {self.name!r} contains non-finite values")

    def aligned_to(self, series: StationSeries) -> np.ndarray:
        """Return the (years x 365) block matching ``series``' calendar."""
        if self.start_year > series.start_year or self.end_year < series.end_year:
            raise ValueError(
                f"covariate {self.name!r} spans {self.start_year}-{self.end_year}, "
                f"series needs {series.start_year}-{series.end_year}"
            )
        lo = series.start_year - self.start_year
        return self.values[lo : lo + series.n_years]


@dataclass
class TimeIndex:
    """Vectorized time coordinates, one entry per (year, day) cell."""

    t_raw: np.ndarray  # 1-based day counter from the window start
    t_norm: np.ndarray  # affine image of t_raw in [0, 1]
    d: np.ndarray  # day-of-year 1..365
    year: np.ndarray

    def __len__(self) -> int:
        return self.t_raw.size


def day_of_year_365(date: dt.date) -> int | None:
    """Map a calendar date onto the 365-day year; Feb 29 maps to None.

    In leap years every date after Feb 28 shifts down by one so that e.g.
    Mar 1 is always day 60 and Dec 31 is always day 365.
    """
    if date.month == 2 and date.day == 29:
        return None
    return int(_MONTH_OFFSET[date.month - 1]) + date.day


def drop_leap_days(series: StationSeries) -> StationSeries:
    """Idempotent leap-day removal.

    Series constructed by this module are already on the 365-day calendar
    (Feb 29 rows are discarded on load), so this returns the input unchanged;
    it exists so pipelines can state the normalization explicitly.
    """
    return series


def load_station_csv(path, variable: str = "Dmx") -> StationSeries:
    """Load one station's daily series from a ``station_id,date,value`` CSV.

    Dates are ISO ``YYYY-MM-DD``; an empty value field marks a missing day.
    Feb 29 rows are dropped.  The returned matrix spans the min..max year
    present in the file, with unobserved days masked.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such series file: {path}")

    records: list[tuple[int, int, float]] = []  # (year, day, value)
    station_id: str | None = None
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:3]] != ["station_id", "date", "value"]:
            raise StationDataError(f"{path}: expected header 'station_id,date,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise StationDataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            sid, date_str, value_str = (field.strip() for field in row)
            if station_id is None:
                station_id = sid
            elif sid != station_id:
                raise StationDataError(
                    f"{path}:{lineno}: mixed station ids ({sid!r} after {station_id!r})"
                )
            try:
                date = dt.date.fromisoformat(date_str)
            except ValueError as exc:
                raise StationDataError(f"{path}:{lineno}: bad date {date_str!r}: {exc}") from None
            if not value_str:
                continue  # explicit missing marker
            try:
                value = float(value_str)
            except ValueError:
                raise StationDataError(f"{path}:{lineno}: bad value {value_str!r}") from None
            d = day_of_year_365(date)
            if d is None:
                continue  # Feb 29
            records.append((date.year, d, value))

    if station_id is None or not records:
        raise StationDataError(f"{path}: no observations found")

    years = [r[0] for r in records]
    start_year, end_year = min(years), max(years)
    ny = end_year - start_year + 1
    values = np.full((ny, DAYS_PER_YEAR), np.nan)
    mask = np.zeros((ny, DAYS_PER_YEAR), dtype=bool)
    for year, d, value in records:
        values[year - start_year, d - 1] = value
        mask[year - start_year, d - 1] = True

    meta = StationMeta(station_id=station_id, lat=0.0, lon=0.0)
    return StationSeries(meta=meta, start_year=start_year, end_year=end_year,
                         values=values, mask=mask, variable=variable)


def load_metadata_csv(path) -> dict[str, StationMeta]:
    """Read ``station_id,lat,lon,elevation,state`` rows into StationMeta."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such metadata file: {path}")
    out: dict[str, StationMeta] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"station_id", "lat", "lon"}
        if reader.fieldnames is None or not required.issubset(set(reader.fieldnames)):
            raise StationDataError(f"{path}: metadata header must include station_id,lat,lon")
        for lineno, row in enumerate(reader, start=2):
            sid = row["station_id"].strip()
            if sid in out:
                raise StationDataError(f"{path}:{lineno}: duplicate station_id {sid!r}")
            elev = row.get("elevation") or None
            out[sid] = StationMeta(
                station_id=sid,
                lat=float(row["lat"]),
                lon=float(row["lon"]),
                elevation=float(elev) if elev else None,
                state=(row.get("state") or "").strip() or None,
            )
    return out


def load_covariate_csv(path, name: str, start_year: int, end_year: int) -> CovariateSeries:
    """Read a ``date,value`` covariate file onto the (year, 365) grid.

    Rows dated on the first of a month with no other rows inside that month
    are broadcast to the whole month; daily rows are used as-is.  Every day
    of the requested span must end up covered.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such covariate file: {path}")
    ny = end_year - start_year + 1
    values = np.full((ny, DAYS_PER_YEAR), np.nan)
    monthly: dict[tuple[int, int], float] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["date", "value"]:
            raise StationDataError(f"{path}: expected header 'date,value'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                date = dt.date.fromisoformat(row[0].strip())
                value = float(row[1])
            except (ValueError, IndexError) as exc:
                raise StationDataError(f"{path}:{lineno}: bad row: {exc}") from None
            if not (start_year <= date.year <= end_year):
                continue
            d = day_of_year_365(date)
            if d is None:
                continue
            if date.day == 1:
                monthly[(date.year, date.month)] = value
            values[date.year - start_year, d - 1] = value

    # Broadcast month-start rows across their month wherever days are unset.
    for (year, month), value in monthly.items():
        d0 = int(_MONTH_OFFSET[month - 1]) + 1
        d1 = int(_MONTH_OFFSET[month]) if month < 12 else DAYS_PER_YEAR
        row = values[year - start_year]
        span = slice(d0 - 1, d1)
        unset = ~np.isfinite(row[span])
        row[span] = np.where(unset, value, row[span])

    if not np.all(np.isfinite(values)):
        missing = int(np.sum(~np.isfinite(values)))
        raise StationDataError(f"{path}: covariate leaves {missing} days uncovered in {start_year}-{end_year}")
    return CovariateSeries(name=name, start_year=start_year, end_year=end_year, values=values)


def filter_stations(
    stations: list[StationSeries],
    max_missing_frac: float,
    required_span: tuple[int, int] | None = None,
    *,
    missing_over_window: bool = True,
) -> list[StationSeries]:
    """Keep stations meeting the missingness threshold and span requirement.

    The missing fraction is computed over ``required_span`` when given and
    ``missing_over_window`` is True (the default), else over each station's
    own observed span.  A station passes if its fraction is <= the threshold
    and its observed span covers ``required_span``.
    """
    if not 0.0 <= max_missing_frac <= 1.0:
        raise ValueError("max_missing_frac must lie in [0, 1]")
    kept: list[StationSeries] = []
    for series in stations:
        span = series.observed_year_span()
        if span is None:
            continue
        if required_span is not None and not (span[0] <= required_span[0] and span[1] >= required_span[1]):
            continue
        window = required_span if (missing_over_window and required_span is not None) else span
        if series.missing_fraction(window) <= max_missing_frac:
            kept.append(series)
    dropped = len(stations) - len(kept)
    if dropped:
        logger.warning("filter_stations: excluded %d of %d stations", dropped, len(stations))
    return kept


def normalized_time(t_raw, n_total: int):
    """Affine map of 1-based day counters onto [0, 1]: (t-1)/(N-1)."""
    if n_total < 2:
        raise DegenerateSpanError("cannot normalize a span with fewer than 2 days")
    return (np.asarray(t_raw, dtype=float) - 1.0) / (n_total - 1.0)


def time_index(series: StationSeries, window: tuple[int, int] | None = None) -> TimeIndex:
    """Time coordinates for every (year, day) cell of ``series``.

    ``window`` is the (start_year, end_year) study window the day counter and
    normalization refer to; it defaults to the series' own span.  Normalizing
    over a shared window keeps trend coefficients comparable across stations.
    """
    if window is None:
        window = (series.start_year, series.end_year)
    w0, w1 = int(window[0]), int(window[1])
    if not (w0 <= series.start_year and series.end_year <= w1):
        raise ValueError(
            f"window {w0}-{w1} does not cover series span "
            f"{series.start_year}-{series.end_year}"
        )
    n_total = (w1 - w0 + 1) * DAYS_PER_YEAR
    d = np.tile(np.arange(1, DAYS_PER_YEAR + 1), series.n_years)
    year = np.repeat(series.years, DAYS_PER_YEAR)
    t_raw = (year - w0) * DAYS_PER_YEAR + d
    return TimeIndex(t_raw=t_raw, t_norm=normalized_time(t_raw, n_total), d=d, year=year)


def season_days(season: str) -> np.ndarray:
    """Days-of-year belonging to a season tag: 'all', 'djf' or 'jja'."""
    season = season.lower()
    if season == "all":
        return np.arange(1, DAYS_PER_YEAR + 1)
    if season == "djf":  # December, January, February
        return np.concatenate([np.arange(335, 366), np.arange(1, 60)])
    if season == "jja":  # June, July, August
        return np.arange(152, 244)
    raise ValueError(f"unknown season {season!r}; expected all, djf or jja")

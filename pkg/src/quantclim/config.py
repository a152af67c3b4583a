"""Flat key=value run configuration with strict key validation."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration file or option value."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


@dataclass
class RunConfig:
    """Settings shared by all CLI commands; parsed from key=value text."""

    # data
    data_dir: str = ""
    metadata_csv: str = ""
    soi_csv: str = ""
    variable: str = "Dmx"
    study_start: int = 1960
    study_end: int = 2019
    max_missing: float = 0.2
    missing_over_window: bool = True
    # model
    k: int = 4
    pieces: int = 4
    model_form: str = "reduced_sigma"
    copula: bool = True
    season: str = "all"
    tau_grid: tuple[float, ...] = (0.1, 0.5, 0.9)
    # mcmc
    n_iter: int = 4000
    n_burn: int = 1000
    thin: int = 5
    seed: int = 0
    target_accept: float = 0.35
    # exploration / reporting
    lag_max: int = 800
    trend_curve_threshold: float = 0.3
    output_dir: str = "out"
    # simulation study
    sim_stations: int = 10
    sim_years: int = 5
    sim_replicates: int = 20
    sim_k: int = 2
    sim_n_iter: int = 2200
    sim_n_burn: int = 900
    sim_thin: int = 4

    def __post_init__(self):
        if self.variable not in ("Dmx", "Dmn"):
            raise ConfigError(f"variable must be Dmx or Dmn, got {self.variable!r}")
        if self.season not in ("all", "djf", "jja"):
            raise ConfigError(f"season must be all, djf or jja, got {self.season!r}")
        if self.model_form not in ("reduced_sigma", "full"):
            raise ConfigError(f"model_form must be reduced_sigma or full, got {self.model_form!r}")
        if not 0.0 <= self.max_missing <= 1.0:
            raise ConfigError("max_missing must lie in [0, 1]")
        if self.study_end < self.study_start:
            raise ConfigError("study_end precedes study_start")
        if not self.tau_grid or any(not 0 < t < 1 for t in self.tau_grid):
            raise ConfigError("tau_grid entries must lie in (0, 1)")

    @property
    def study_window(self) -> tuple[int, int]:
        return (self.study_start, self.study_end)

    @property
    def study_years(self) -> int:
        return self.study_end - self.study_start + 1

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"no such config file: {path}")
        known = {f.name: f for f in fields(cls)}
        raw: dict[str, str] = {}
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in stripped.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            raw[key] = value

        kwargs = {}
        for key, value in raw.items():
            ftype = known[key].type
            try:
                if ftype == "bool":
                    kwargs[key] = _parse_bool(value)
                elif ftype == "int":
                    kwargs[key] = int(value)
                elif ftype == "float":
                    kwargs[key] = float(value)
                elif ftype == "tuple[float, ...]":
                    kwargs[key] = _parse_floats(value)
                else:
                    kwargs[key] = value
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        return cls(**kwargs)

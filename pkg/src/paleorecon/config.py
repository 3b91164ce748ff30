"""Pipeline configuration read from a versioned YAML file.

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, DomainError
from .prior.model import PenaltyConfig, default_grid
from .spatial.censoring import MonteCarloConfig
from .spatial.covariance import Location

SCHEMA_VERSION = 1
YEAR_SPAN = (1368, 1911)


@dataclass(frozen=True)
class TargetLocation:
    name: str
    lon: float
    lat: float
    station: str = ""          # station id used for validation; defaults to the name

    @property
    def station_id(self) -> str:
        return self.station or self.name

    @property
    def loc(self) -> Location:
        return Location(self.lon, self.lat)


@dataclass
class PipelineConfig:
    reaches: Path | None
    lme: Path | None
    ghcn: Path | None
    output_dir: Path
    locations: list
    years: tuple = YEAR_SPAN
    seed: int = 20240601
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    bin_edges: np.ndarray = field(default_factory=lambda: np.linspace(0.0, 1500.0, 61))
    grid_lon: np.ndarray = field(default_factory=lambda: np.arange(100.0, 130.01, 1.0))
    grid_lat: np.ndarray = field(default_factory=lambda: np.arange(18.0, 45.01, 1.0))
    cv_grid: list = field(default_factory=default_grid)
    max_sweeps: int = 500
    qmap_target: str = "mean"
    err_var_ceiling: float = 1e6
    min_months: int = 12
    validate_years: tuple | None = None
    plots: bool = True
    threads: int = 1
    source_text: str = ""

    def location(self, name: str) -> TargetLocation:
        for t in self.locations:
            if t.name == name:
                return t
        raise ConfigError(f"unknown location {name!r}; configured: {', '.join(t.name for t in self.locations)}")

    def config_hash(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()

    def require(self, key: str) -> Path:
        path = getattr(self, key)
        if path is None:
            raise ConfigError(f"config has no paths.{key}")
        if not path.exists():
            raise ConfigError(f"paths.{key} points to {path}, which does not exist")
        return path


def _edges(value):
    if isinstance(value, dict):
        try:
            return np.linspace(float(value["start"]), float(value["stop"]), int(value["count"]))
        except KeyError as exc:
            raise ConfigError(f"variogram.bin_edges needs start, stop and count (missing {exc})") from None
    return np.asarray(value, dtype=float)


def _axis(value, name):
    try:
        lo, hi, step = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"krige.grid.{name} must be [start, stop, step]") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"krige.grid.{name} must have start <= stop and a positive step")
    return lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)


def _cv_grid(value):
    if value is None:
        return default_grid()
    if isinstance(value, dict):
        return default_grid(int(value.get("n_per_axis", 4)), float(value.get("lo", 1e-2)),
                            float(value.get("hi", 1e2)))
    return [PenaltyConfig(*map(float, row)) for row in value]


def parse_config(text: str, base_dir: Path = Path(".")) -> PipelineConfig:
    """Build a config from YAML text; raises ConfigError with the offending key."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    known = {"schema_version", "paths", "output_dir", "locations", "years", "seed", "monte_carlo",
             "variogram", "krige", "qmap", "prior", "validate", "plots", "threads"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    def path(key):
        v = (raw.get("paths") or {}).get(key)
        return None if v is None else (base_dir / v).resolve()

    try:
        locs = [TargetLocation(str(d["name"]), float(d["lon"]), float(d["lat"]),
                               str(d.get("station", "")))
                for d in raw.get("locations") or []]
        for t in locs:
            t.loc  # validates the coordinates
        if len({t.name for t in locs}) != len(locs):
            raise ConfigError("location names must be unique")
        years = tuple(int(y) for y in raw.get("years", YEAR_SPAN))
        if len(years) != 2 or years[0] > years[1]:
            raise ConfigError("years must be [first, last]")
        if years[0] < YEAR_SPAN[0] or years[1] > YEAR_SPAN[1]:
            raise ConfigError(f"years {years} fall outside the supported span {YEAR_SPAN}")
        seed = int(raw.get("seed", 20240601))
        mc_raw = dict(raw.get("monte_carlo") or {})
        mc_raw.setdefault("seed", seed)
        mc = MonteCarloConfig(**mc_raw)
        vg = raw.get("variogram") or {}
        kr = raw.get("krige") or {}
        grid = kr.get("grid") or {}
        qm = raw.get("qmap") or {}
        pr = raw.get("prior") or {}
        va = raw.get("validate") or {}
        cfg = PipelineConfig(
            reaches=path("reaches"), lme=path("lme"), ghcn=path("ghcn"),
            output_dir=(base_dir / raw.get("output_dir", "out")).resolve(),
            locations=locs, years=years, seed=seed, mc=mc,
            bin_edges=_edges(vg.get("bin_edges", {"start": 0, "stop": 1500, "count": 61})),
            grid_lon=_axis(grid.get("lon", [100, 130, 1]), "lon"),
            grid_lat=_axis(grid.get("lat", [18, 45, 1]), "lat"),
            cv_grid=_cv_grid(pr.get("cv_grid")),
            max_sweeps=int(pr.get("max_sweeps", 500)),
            qmap_target=str(qm.get("target", "mean")),
            err_var_ceiling=float(qm.get("err_var_ceiling", 1e6)),
            min_months=int(va.get("min_months", 12)),
            validate_years=None if va.get("years") is None else tuple(int(y) for y in va["years"]),
            plots=bool(raw.get("plots", True)),
            threads=int(raw.get("threads", 1)),
            source_text=text,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, DomainError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from None
    if cfg.qmap_target not in ("mean", "pooled"):
        raise ConfigError("qmap.target must be 'mean' or 'pooled'")
    if not 9 <= cfg.min_months <= 12:
        raise ConfigError("validate.min_months must lie in 9..12")
    if len(cfg.bin_edges) < 4 or np.any(np.diff(cfg.bin_edges) <= 0):
        raise ConfigError("variogram.bin_edges must be strictly increasing with at least 4 entries")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path.parent)


def mc_dict(mc: MonteCarloConfig) -> dict:
    return asdict(mc)


def dump_json(obj) -> str:
    """Stable JSON text (sorted keys, fixed float formatting by ``repr``)."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"

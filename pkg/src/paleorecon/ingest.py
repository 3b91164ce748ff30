"""Reading and cleaning of proxy, ensemble and station files, plus the
correlation statistic used for validation.

All files are comma-separated UTF-8 with a header row.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, EstimationError
from .spatial.covariance import Location, haversine

PROXY_HEADER = ("year", "lat", "lon", "index")
LME_HEADER = ("series_id", "year", "temp_c")
GHCN_HEADER = ("station", "year", "month", "temp_c")


@dataclass(frozen=True)
class ProxyRecord:
    year: int
    loc: Location
    index: float

    def __post_init__(self):
        if not (-2.0 <= self.index <= 1.0):
            raise DomainError(f"index {self.index} outside [-2, 1]")


@dataclass(frozen=True)
class Reject:
    line: int
    message: str

    def format(self, source: str = "") -> str:
        return f"{source}:{self.line}: {self.message}" if source else f"line {self.line}: {self.message}"


@dataclass
class ProxyTable:
    """Column-oriented proxy records sorted by (year, lat, lon)."""

    years: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    index: np.ndarray
    rejects: list = field(default_factory=list)

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        self.index = np.asarray(self.index, dtype=float)

    def __len__(self) -> int:
        return len(self.years)

    def __iter__(self):
        for y, la, lo, z in zip(self.years, self.lat, self.lon, self.index):
            yield ProxyRecord(int(y), Location(float(lo), float(la)), float(z))

    def year(self, y: int) -> "ProxyTable":
        sel = self.years == y
        return ProxyTable(self.years[sel], self.lat[sel], self.lon[sel], self.index[sel])

    @classmethod
    def from_records(cls, records) -> "ProxyTable":
        return _merge([(r.year, r.loc.lat, r.loc.lon, r.index) for r in records])


def _merge(rows) -> ProxyTable:
    """Average duplicate (year, lat, lon) rows and sort canonically."""
    groups: dict = {}
    for y, la, lo, z in rows:
        groups.setdefault((int(y), float(la), float(lo)), []).append(float(z))
    keys = sorted(groups)
    years = [k[0] for k in keys]
    lat = [k[1] for k in keys]
    lon = [k[2] for k in keys]
    index = [math.fsum(groups[k]) / len(groups[k]) for k in keys]
    return ProxyTable(years, lat, lon, index)


def _read_rows(path, header):
    """Yield (line_number, dict) rows; missing columns raise DataError."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            return
        names = [c.strip() for c in first]
        missing = [h for h in header if h not in names]
        if missing:
            raise DataError(f"{path}: header must contain {','.join(header)}; missing {','.join(missing)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                yield reader.line_num, None
                continue
            yield reader.line_num, dict(zip(names, (c.strip() for c in row)))


def _finite(text, what):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"{what} is not finite")
    return v


def _int(text, what):
    v = _finite(text, what)
    if v != int(v):
        raise ValueError(f"{what} must be an integer")
    return int(v)


def parse_proxy_csv(path) -> ProxyTable:
    """Parse ``year,lat,lon,index`` rows.

    Duplicate (year, lat, lon) rows are averaged into one record. Rows that
    fail validation are skipped and listed in ``table.rejects``.
    """
    rows, rejects = [], []
    seen_header = False
    for line, row in _read_rows(path, PROXY_HEADER):
        seen_header = True
        if row is None:
            rejects.append(Reject(line, "wrong number of fields"))
            continue
        try:
            year = _int(row["year"], "year")
            lat = _finite(row["lat"], "lat")
            lon = _finite(row["lon"], "lon")
            z = _finite(row["index"], "index")
            if not (-2.0 <= z <= 1.0):
                raise ValueError(f"index {z:g} outside [-2, 1]")
            loc = Location(lon, lat)
        except (ValueError, DomainError) as exc:
            rejects.append(Reject(line, str(exc)))
            continue
        rows.append((year, loc.lat, loc.lon, z))
    if not rows and not rejects:
        warnings.warn(f"{path}: no proxy records" + ("" if seen_header else " (empty file)"))
    table = _merge(rows)
    table.rejects = rejects
    return table


def write_proxy_csv(path, table: ProxyTable):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROXY_HEADER)
        for y, la, lo, z in zip(table.years, table.lat, table.lon, table.index):
            w.writerow([int(y), repr(float(la)), repr(float(lo)), repr(float(z))])


# ---------------------------------------------------------------------------
# ensemble simulations


@dataclass
class GridSeries:
    """Ensemble members at one grid cell, ``temp[t, j]``."""

    loc: Location | None
    years: np.ndarray
    temp: np.ndarray
    members: list

    def mean(self) -> np.ndarray:
        return self.temp.mean(axis=1)


def parse_lme_csv(path) -> list[GridSeries]:
    """Parse ``series_id,year,temp_c`` rows, optionally with ``lat,lon``.

    Without coordinates the whole file is one cell. Every member must cover
    the same years.
    """
    cells: dict = {}
    has_coords = None
    rejects = []
    for line, row in _read_rows(path, LME_HEADER):
        if row is None:
            rejects.append(Reject(line, "wrong number of fields"))
            continue
        if has_coords is None:
            has_coords = "lat" in row and "lon" in row
        try:
            year = _int(row["year"], "year")
            temp = _finite(row["temp_c"], "temp_c")
            key = None
            if has_coords:
                loc = Location(_finite(row["lon"], "lon"), _finite(row["lat"], "lat"))
                key = (loc.lat, loc.lon)
        except (ValueError, DomainError) as exc:
            rejects.append(Reject(line, str(exc)))
            continue
        cell = cells.setdefault(key, {})
        series = cell.setdefault(row["series_id"], {})
        if year in series:
            rejects.append(Reject(line, f"duplicate year {year} for series {row['series_id']}"))
            continue
        series[year] = temp
    if rejects:
        raise DataError(f"{path}: malformed ensemble rows\n" + "\n".join(r.format(str(path)) for r in rejects))
    if not cells:
        raise DataError(f"{path}: no ensemble rows")
    out = []
    for key in sorted(cells, key=lambda k: (k is not None, k)):
        members = sorted(cells[key])
        years = sorted(cells[key][members[0]])
        for mname in members:
            if sorted(cells[key][mname]) != years:
                raise DataError(f"{path}: member {mname} does not cover the same years as {members[0]}")
        temp = np.array([[cells[key][mname][y] for mname in members] for y in years])
        loc = None if key is None else Location(key[1], key[0])
        out.append(GridSeries(loc, np.array(years), temp, members))
    return out


def write_lme_csv(path, cells: list[GridSeries]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        coords = cells[0].loc is not None
        w.writerow(LME_HEADER + (("lat", "lon") if coords else ()))
        for cell in cells:
            for j, name in enumerate(cell.members):
                for t, y in enumerate(cell.years):
                    row = [name, int(y), repr(float(cell.temp[t, j]))]
                    if coords:
                        row += [repr(cell.loc.lat), repr(cell.loc.lon)]
                    w.writerow(row)


def nearest_cell(grid: list[GridSeries], loc: Location) -> GridSeries:
    """Cell closest in great-circle distance; ties go to the smaller (lat, lon)."""
    if not grid:
        raise DataError("grid is empty")
    if len(grid) == 1 and grid[0].loc is None:
        return grid[0]
    lat = np.array([c.loc.lat for c in grid])
    lon = np.array([c.loc.lon for c in grid])
    d = haversine(loc.lon, loc.lat, lon, lat)
    best = min(range(len(grid)), key=lambda k: (d[k], lat[k], lon[k]))
    return grid[best]


# ---------------------------------------------------------------------------
# instrumental stations


@dataclass
class StationSeries:
    station_id: str
    years: np.ndarray
    annual_temp: np.ndarray


def parse_ghcn_csv(path):
    """Rows ``station,year,month,temp_c`` as a list of tuples."""
    rows, rejects = [], []
    for line, row in _read_rows(path, GHCN_HEADER):
        if row is None:
            rejects.append(Reject(line, "wrong number of fields"))
            continue
        try:
            rows.append((row["station"], _int(row["year"], "year"), _int(row["month"], "month"),
                         _finite(row["temp_c"], "temp_c")))
        except ValueError as exc:
            rejects.append(Reject(line, str(exc)))
    if rejects:
        raise DataError(f"{path}: malformed station rows\n" + "\n".join(r.format(str(path)) for r in rejects))
    return rows


def monthly_to_annual(rows, min_months: int = 12) -> dict[str, StationSeries]:
    """Annual means per station; years with fewer than ``min_months`` months are dropped."""
    if not 1 <= min_months <= 12:
        raise DomainError("min_months must lie in 1..12")
    table: dict = {}
    for station, year, month, temp in rows:
        if not 1 <= int(month) <= 12:
            raise DataError(f"month {month} outside 1..12 (station {station}, year {year})")
        cell = table.setdefault(str(station), {}).setdefault(int(year), {})
        if int(month) in cell:
            raise DataError(f"duplicate record for station {station}, year {year}, month {month}")
        cell[int(month)] = float(temp)
    out = {}
    dropped = []
    for station in sorted(table):
        years, temps = [], []
        for year in sorted(table[station]):
            months = table[station][year]
            if len(months) < min_months:
                dropped.append(f"{station}/{year}")
                continue
            years.append(year)
            temps.append(math.fsum(months[k] for k in sorted(months)) / len(months))
        out[station] = StationSeries(station, np.array(years, dtype=int), np.array(temps))
    if dropped:
        warnings.warn(f"dropped {len(dropped)} station-year(s) with fewer than {min_months} months: "
                      + ", ".join(dropped[:10]) + (" ..." if len(dropped) > 10 else ""))
    return out


def pearson_correlation(a, b, years_a=None, years_b=None) -> float:
    """Pearson correlation over the years both series share."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if years_a is not None or years_b is not None:
        if years_a is None or years_b is None:
            raise DataError("give years for both series or for neither")
        common, ia, ib = np.intersect1d(np.asarray(years_a), np.asarray(years_b), return_indices=True)
        a, b = a[ia], b[ib]
    elif a.shape != b.shape:
        raise DataError("series lengths differ and no years were given")
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if len(a) < 3:
        raise DataError("need at least three overlapping values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.sum(da * da)), np.sqrt(np.sum(db * db))
    if sa == 0 or sb == 0:
        raise EstimationError("correlation undefined: a series has zero variance")
    return float(np.clip(np.sum(da * db) / (sa * sb), -1.0, 1.0))


def read_table(path, header):
    """Generic numeric CSV reader used for pipeline artifacts."""
    cols = {h: [] for h in header}
    for line, row in _read_rows(path, header):
        if row is None:
            raise DataError(f"{path}:{line}: wrong number of fields")
        for h in header:
            try:
                cols[h].append(float(row[h]))
            except ValueError:
                raise DataError(f"{path}:{line}: column {h} is not numeric: {row[h]!r}") from None
    return {h: np.array(v) for h, v in cols.items()}

"""Locations, great-circle distances, the exponential covariance model and
the ordinal rounding function that maps latent index values to REACHES-style
categories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError

EARTH_RADIUS_KM = 6371.0

# Cut points of the rounding function; categories are -2, -1, 0, 1.
CUT_POINTS = (-1.5, -0.5, 0.5)
CATEGORIES = (-2, -1, 0, 1)


def _normalize_lon(lon):
    # leave in-range values untouched so they round-trip exactly
    return lon - 360.0 if lon >= 180.0 else lon


@dataclass(frozen=True)
class Location:
    lon: float
    lat: float

    def __post_init__(self):
        lon, lat = float(self.lon), float(self.lat)
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise DomainError(f"non-finite coordinates ({lon}, {lat})")
        if not -90.0 <= lat <= 90.0:
            raise DomainError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon < 360.0:
            raise DomainError(f"longitude {lon} outside [-180, 360)")
        object.__setattr__(self, "lon", _normalize_lon(lon))
        object.__setattr__(self, "lat", lat)


@dataclass(frozen=True)
class CovarianceParams:
    """Range (km), process variance and nugget (noise) variance."""

    range_alpha: float
    var_y: float
    var_eps: float

    def __post_init__(self):
        if not self.range_alpha > 0:
            raise DomainError(f"range_alpha must be positive, got {self.range_alpha}")
        if not self.var_y > 0:
            raise DomainError(f"var_y must be positive, got {self.var_y}")
        if not self.var_eps >= 0:
            raise DomainError(f"var_eps must be non-negative, got {self.var_eps}")

    @property
    def var_total(self) -> float:
        return self.var_y + self.var_eps

    def as_dict(self) -> dict:
        return {"range_alpha": self.range_alpha, "var_y": self.var_y, "var_eps": self.var_eps}


def exp_cov(params: CovarianceParams, distance):
    """Exponential covariance ``var_y * exp(-d / range_alpha)``.

    Accepts scalars or arrays of distances in km.
    """
    d = np.asarray(distance, dtype=float)
    if not np.all(np.isfinite(d)):
        raise DomainError("distance must be finite")
    if np.any(d < 0):
        raise DomainError("distance must be non-negative")
    out = params.var_y * np.exp(-d / params.range_alpha)
    return float(out) if out.ndim == 0 else out


def round_index(x):
    """Round latent values to the ordinal scale {-2, -1, 0, 1}.

    The middle category is closed on both sides: 0.5 maps to 0 and -0.5 maps
    to 0, while -1.5 maps to -1.
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x < -1.5, -2, np.where(x < -0.5, -1, np.where(x <= 0.5, 0, 1)))
    return int(out) if out.ndim == 0 else out


def haversine(lon1, lat1, lon2, lat2):
    """Great-circle distance in km; broadcasts over numpy arrays."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float)) for v in (lon1, lat1, lon2, lat2))
    s = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))


def great_circle_distance(a: Location, b: Location) -> float:
    return float(haversine(a.lon, a.lat, b.lon, b.lat))


def distance_matrix(lon_a, lat_a, lon_b=None, lat_b=None):
    """Pairwise distances (km) between two coordinate sets, shape (len(a), len(b))."""
    lon_a = np.asarray(lon_a, dtype=float)
    lat_a = np.asarray(lat_a, dtype=float)
    if lon_b is None:
        lon_b, lat_b = lon_a, lat_a
    lon_b = np.asarray(lon_b, dtype=float)
    lat_b = np.asarray(lat_b, dtype=float)
    d = haversine(lon_a[:, None], lat_a[:, None], lon_b[None, :], lat_b[None, :])
    if lon_b is lon_a:
        np.fill_diagonal(d, 0.0)
    return d

"""Empirical variograms pooled over years and Cressie weighted least squares
fits of the exponential-plus-nugget model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import DataError, EstimationError
from .covariance import EARTH_RADIUS_KM, CovarianceParams

_CHUNK = 512


@dataclass
class EmpiricalVariogram:
    bin_edges: np.ndarray
    lags: np.ndarray          # mean pair distance per bin (nan when empty)
    gamma: np.ndarray         # semivariance per bin (nan when empty)
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def nonempty(self):
        keep = ~self.empty
        return self.lags[keep], self.gamma[keep], self.counts[keep]

    def as_dict(self) -> dict:
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]
        return {
            "bin_edges": [float(e) for e in self.bin_edges],
            "lags": clean(self.lags),
            "gamma": clean(self.gamma),
            "counts": [int(c) for c in self.counts],
        }


def _unit_vectors(lon, lat):
    lo, la = np.radians(lon), np.radians(lat)
    return np.column_stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)])


def _accumulate_year(lon, lat, z, edges, sums, sqsums, counts):
    n = len(z)
    nb = len(edges) - 1
    xyz = _unit_vectors(lon, lat)
    for start in range(0, n - 1, _CHUNK):
        stop = min(start + _CHUNK, n - 1)
        # distances from this row block to every later site, via the chord length
        chord2 = np.clip(2.0 - 2.0 * (xyz[start:stop] @ xyz[start:].T), 0.0, 4.0)
        d = 2.0 * EARTH_RADIUS_KM * np.arcsin(0.5 * np.sqrt(chord2))
        sq = (z[start:stop, None] - z[None, start:]) ** 2
        upper = np.arange(start, n)[None, :] > np.arange(start, stop)[:, None]
        d, sq = d[upper], sq[upper]
        keep = (d >= edges[0]) & (d <= edges[-1])
        d, sq = d[keep], sq[keep]
        idx = np.minimum(np.searchsorted(edges, d, side="right") - 1, nb - 1)
        counts += np.bincount(idx, minlength=nb)
        sums += np.bincount(idx, weights=d, minlength=nb)
        sqsums += np.bincount(idx, weights=sq, minlength=nb)


def empirical_variogram(years, lon, lat, index, bin_edges) -> EmpiricalVariogram:
    """Semivariances from same-year pairs pooled over all years.

    Every pair contributes equally regardless of how many records its year
    holds.
    """
    years = np.asarray(years)
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    z = np.asarray(index, dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise DataError("bin_edges must be strictly increasing with at least two entries")
    nb = len(edges) - 1
    sums = np.zeros(nb)
    sqsums = np.zeros(nb)
    counts = np.zeros(nb, dtype=np.int64)
    for y in np.unique(years):
        sel = years == y
        if sel.sum() >= 2:
            _accumulate_year(lon[sel], lat[sel], z[sel], edges, sums, sqsums, counts)
    if counts.sum() == 0:
        raise EstimationError("no same-year pairs fall inside the variogram bins")
    with np.errstate(invalid="ignore", divide="ignore"):
        lags = np.where(counts > 0, sums / counts, np.nan)
        gamma = np.where(counts > 0, 0.5 * sqsums / counts, np.nan)
    return EmpiricalVariogram(edges, lags, gamma, counts)


def variogram_model(params: CovarianceParams, h):
    """Exponential variogram with nugget, evaluated at lags h > 0."""
    h = np.asarray(h, dtype=float)
    return params.var_eps + params.var_y * (1.0 - np.exp(-h / params.range_alpha))


def wls_fit_variogram(binned: EmpiricalVariogram, starts=None) -> CovarianceParams:
    """Fit (range, partial sill, nugget) by Cressie's weighted least squares.

    Minimizes ``sum N_k (gamma_k / model(h_k) - 1)^2``. A fixed set of
    starting points makes the result deterministic.
    """
    h, g, n = binned.nonempty()
    if len(h) < 3:
        raise EstimationError(f"need at least 3 non-empty bins, got {len(h)}")
    w = np.sqrt(n.astype(float))
    hmax = float(h.max())

    def resid(theta):
        alpha, sill, nugget = theta
        model = nugget + sill * (1.0 - np.exp(-h / alpha))
        return w * (g / model - 1.0)

    if starts is None:
        tail = float(np.mean(g[-max(1, len(g) // 4):]))
        nug0 = max(float(g[0]) * 0.5, 1e-6)
        sill0 = max(tail - nug0, 1e-3)
        starts = [(hmax * f, sill0, nug0) for f in (0.1, 0.25, 0.5)]

    lower = [hmax * 1e-4, 1e-10, 0.0]
    upper = [hmax * 1e3, np.inf, np.inf]
    best = None
    for x0 in starts:
        x0 = np.clip(np.asarray(x0, dtype=float), np.add(lower, 1e-12), upper)
        try:
            res = least_squares(resid, x0, bounds=(lower, upper), method="trf",
                                x_scale="jac", xtol=1e-12, ftol=1e-12, gtol=1e-12,
                                max_nfev=5000)
        except (ValueError, FloatingPointError):
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise EstimationError("variogram fit failed for all starting points")
    alpha, sill, nugget = (float(v) for v in best.x)
    fit = CovarianceParams(alpha, sill, max(nugget, 0.0))
    if best.status <= 0:
        raise EstimationError("variogram optimizer did not converge", best=fit)
    return fit

"""Zero-mean best linear prediction from rounded ordinal observations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from ..errors import DataError
from .censoring import CensoredCovariance, MonteCarloConfig
from .covariance import CovarianceParams, Location, distance_matrix

RIDGE = 1e-8


@dataclass
class CensoredMoments:
    mu_z: float
    c_yz: np.ndarray
    sigma_z: np.ndarray
    warning: str | None = None


@dataclass
class KrigedValue:
    estimate: float
    mspe: float
    jitter: float = 0.0


def nearest_psd(a: np.ndarray) -> tuple[np.ndarray, bool]:
    """Nearest symmetric PSD matrix in Frobenius norm (eigenvalue clipping).

    Returns the matrix and whether it had to be changed.
    """
    a = 0.5 * (a + a.T)
    if a.size == 0:
        return a, False
    w, v = np.linalg.eigh(a)
    if w.min() >= 0:
        return a, False
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T), True


class CensoredKriger:
    """Precomputed covariance model for kriging rounded data.

    With ``censored=False`` the rounding is ignored and the moments are the
    exact Gaussian ones (simple kriging with a nugget).
    """

    def __init__(self, params: CovarianceParams, mc: MonteCarloConfig = MonteCarloConfig(),
                 censored: bool = True):
        self.params = params
        self.censored = censored
        if censored:
            self.cov = CensoredCovariance(params.var_y, params.var_eps, mc)
            self.mu_z = self.cov.mu_z
            self.warning = self.cov.warning
        else:
            self.cov = None
            self.mu_z = 0.0
            self.warning = None

    def sigma_z(self, d: np.ndarray) -> np.ndarray:
        p = self.params
        if self.censored:
            s = self.cov.cov_z(d, p.range_alpha)
            np.fill_diagonal(s, self.cov.var_z)
        else:
            s = p.var_y * np.exp(-d / p.range_alpha)
            s[np.diag_indices_from(s)] += p.var_eps
        return s

    def c_yz(self, d: np.ndarray) -> np.ndarray:
        p = self.params
        if self.censored:
            return self.cov.cov_yz(d, p.range_alpha)
        return p.var_y * np.exp(-d / p.range_alpha)

    def moments(self, site_lon, site_lat, target_lon, target_lat) -> CensoredMoments:
        site_lon = np.asarray(site_lon, dtype=float)
        site_lat = np.asarray(site_lat, dtype=float)
        d = distance_matrix(site_lon, site_lat)
        sigma, projected = nearest_psd(self.sigma_z(d))
        d0 = distance_matrix(np.atleast_1d(target_lon), np.atleast_1d(target_lat), site_lon, site_lat)[0]
        warning = self.warning
        if projected:
            warning = ((warning + "; ") if warning else "") + "sigma_z projected to nearest PSD matrix"
        return CensoredMoments(self.mu_z, self.c_yz(d0), sigma, warning)

    def predict(self, site_lon, site_lat, obs, target_lon, target_lat):
        """Krige many targets from one set of sites.

        Returns arrays ``(estimate, mspe)`` and the ridge jitter used.
        """
        obs = np.asarray(obs, dtype=float)
        t_lon = np.atleast_1d(np.asarray(target_lon, dtype=float))
        t_lat = np.atleast_1d(np.asarray(target_lat, dtype=float))
        var_y = self.params.var_y
        if obs.size == 0:
            return np.zeros(len(t_lon)), np.full(len(t_lon), var_y), 0.0
        site_lon = np.asarray(site_lon, dtype=float)
        site_lat = np.asarray(site_lat, dtype=float)
        sigma, _ = nearest_psd(self.sigma_z(distance_matrix(site_lon, site_lat)))
        c = self.c_yz(distance_matrix(t_lon, t_lat, site_lon, site_lat))
        factor, jitter = _factor(sigma)
        w = cho_solve(factor, c.T)
        est = w.T @ (obs - self.mu_z)
        mspe = var_y - np.einsum("ij,ji->i", c, w)
        return est, np.clip(mspe, 0.0, var_y), jitter


def _factor(sigma: np.ndarray):
    jitter = 0.0
    scale = float(np.mean(np.diag(sigma))) or 1.0
    for _ in range(12):
        try:
            return cho_factor(sigma + jitter * np.eye(len(sigma)), lower=True), jitter
        except LinAlgError:
            jitter = RIDGE * scale if jitter == 0.0 else jitter * 10.0
    raise LinAlgError("covariance matrix could not be factorized even with ridge jitter")


def censored_moments(params: CovarianceParams, sites: list[Location], target: Location,
                     mc: MonteCarloConfig = MonteCarloConfig(), censored: bool = True) -> CensoredMoments:
    if len(set(sites)) != len(sites):
        raise DataError("sites must be distinct")
    kriger = CensoredKriger(params, mc, censored=censored)
    return kriger.moments([s.lon for s in sites], [s.lat for s in sites], target.lon, target.lat)


def krige(moments: CensoredMoments, observations, params: CovarianceParams) -> KrigedValue:
    """Best linear predictor ``c' S^{-1} (Z - mu 1)`` and its MSPE."""
    z = np.asarray(observations, dtype=float)
    if z.size == 0:
        return KrigedValue(0.0, params.var_y)
    if z.shape != moments.c_yz.shape or moments.sigma_z.shape != (z.size, z.size):
        raise DataError("observation count does not match the covariance dimension")
    factor, jitter = _factor(moments.sigma_z)
    w = cho_solve(factor, moments.c_yz)
    est = float(w @ (z - moments.mu_z))
    mspe = float(params.var_y - moments.c_yz @ w)
    return KrigedValue(est, min(max(mspe, 0.0), params.var_y), jitter)

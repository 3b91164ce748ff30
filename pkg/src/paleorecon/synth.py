"""Synthetic data generators and dense oracles.

Every generator takes an explicit seed and is bit-reproducible for it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky

from .assimilate import PosteriorSeries, align_observations
from .errors import DataError, DomainError
from .ingest import GridSeries, ProxyTable, write_lme_csv, write_proxy_csv
from .prior.model import EnsembleMatrix, PriorModel
from .qmap import CalibratedSeries
from .spatial.covariance import CovarianceParams, Location, distance_matrix, round_index

GP_JITTER = 1e-10


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _check_distinct(lon, lat):
    pts = np.column_stack([lat, lon])
    if len(np.unique(pts, axis=0)) != len(pts):
        raise DataError("sites must be distinct")


def gp_factor(params: CovarianceParams, lon, lat):
    """Lower Cholesky factor of the exponential covariance at the sites."""
    lon = np.atleast_1d(np.asarray(lon, dtype=float))
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    _check_distinct(lon, lat)
    cov = params.var_y * np.exp(-distance_matrix(lon, lat) / params.range_alpha)
    try:
        return cholesky(cov, lower=True)
    except LinAlgError:
        return cholesky(cov + GP_JITTER * params.var_y * np.eye(len(cov)), lower=True)


def sample_gp(params: CovarianceParams, lon, lat, seed) -> np.ndarray:
    """One exact draw of the zero-mean latent process at the given sites."""
    factor = gp_factor(params, lon, lat)
    return factor @ _rng(seed).standard_normal(factor.shape[0])


def simulate_proxies(latent, var_eps: float, seed) -> np.ndarray:
    """Add ``N(0, var_eps)`` noise and round to the ordinal scale."""
    if var_eps < 0:
        raise DomainError("var_eps must be non-negative")
    latent = np.asarray(latent, dtype=float)
    noise = np.sqrt(var_eps) * _rng(seed).standard_normal(latent.shape)
    return round_index(latent + noise)


def simulate_censored_field(params: CovarianceParams, n_sites: int, n_years: int, seed,
                            lon_range=(100.0, 130.0), lat_range=(18.0, 45.0)) -> ProxyTable:
    """Rounded noisy GP draws; each year gets its own uniformly scattered sites."""
    rng = _rng(seed)
    years, lat, lon, idx = [], [], [], []
    for t in range(n_years):
        s_lon = rng.uniform(*lon_range, n_sites)
        s_lat = rng.uniform(*lat_range, n_sites)
        latent = sample_gp(params, s_lon, s_lat, rng)
        years.append(np.full(n_sites, t))
        lon.append(s_lon)
        lat.append(s_lat)
        idx.append(simulate_proxies(latent, params.var_eps, rng).astype(float))
    return ProxyTable(np.concatenate(years), np.concatenate(lat), np.concatenate(lon), np.concatenate(idx))


def simulate_ensemble(ar: PriorModel, n_members: int, seed, members=None) -> EnsembleMatrix:
    """Independent paths of the nonstationary AR(1)."""
    rng = _rng(seed)
    n = len(ar.mu)
    sd = np.sqrt(np.maximum(ar.r2, 0.0))
    e = np.empty((n, n_members))
    e[0] = sd[0] * rng.standard_normal(n_members)
    for t in range(1, n):
        e[t] = ar.m[t - 1] * e[t - 1] + sd[t] * rng.standard_normal(n_members)
    return EnsembleMatrix(ar.years, ar.mu[:, None] + e, members)


def simulate_truth(ar: PriorModel, seed) -> np.ndarray:
    rng = _rng(seed)
    n = len(ar.mu)
    sd = np.sqrt(ar.r2)
    e = np.empty(n)
    e[0] = sd[0] * rng.standard_normal()
    for t in range(1, n):
        e[t] = ar.m[t - 1] * e[t - 1] + sd[t] * rng.standard_normal()
    return ar.mu + e


def prior_covariance(ar: PriorModel) -> np.ndarray:
    """Joint covariance of the AR(1) states: ``cov(X_s, X_t) = P_s prod_{k=s}^{t-1} M_k``."""
    n = len(ar.mu)
    var = ar.marginal_variance()
    cov = np.diag(var)
    for s in range(n):
        c = var[s]
        for t in range(s + 1, n):
            c = c * ar.m[t - 1]
            cov[s, t] = cov[t, s] = c
    return cov


def brute_force_posterior(ar: PriorModel, obs: CalibratedSeries, max_n: int = 50) -> PosteriorSeries:
    """Condition the joint Gaussian prior on the noisy observations directly."""
    n = len(ar.mu)
    if n > max_n:
        raise DomainError(f"dense oracle limited to {max_n} years, got {n}")
    values, err = align_observations(ar, obs)
    cov = prior_covariance(ar)
    seen = np.isfinite(values) & np.isfinite(err)
    if not seen.any():
        return PosteriorSeries(ar.years.copy(), ar.mu.copy(), np.diag(cov).copy())
    c_xo = cov[:, seen]
    s = cov[np.ix_(seen, seen)] + np.diag(err[seen])
    try:
        f = cho_factor(s, lower=True)
    except LinAlgError:
        f = cho_factor(s + 1e-12 * np.trace(s) / len(s) * np.eye(len(s)), lower=True)
    mean = ar.mu + c_xo @ cho_solve(f, values[seen] - ar.mu[seen])
    post = cov - c_xo @ cho_solve(f, c_xo.T)
    return PosteriorSeries(ar.years.copy(), mean, np.diag(post).copy())


# ---------------------------------------------------------------------------
# a whole synthetic world written as pipeline input files


DEFAULT_TARGETS = (("beijing", 116.4, 39.9), ("shanghai", 121.5, 31.2), ("hongkong", 114.2, 22.3))


@dataclass
class SynthConfig:
    seed: int = 20240601
    n_sites: int = 200                      # proxy records per year
    first_year: int = 1792
    n_years: int = 120
    params: CovarianceParams = field(default_factory=lambda: CovarianceParams(300.0, 0.75, 0.15))
    n_members: int = 13
    obs_noise: float = 0.3                  # monthly station noise sd, deg C
    station_years: int = 50
    lon_range: tuple = (100.0, 130.0)
    lat_range: tuple = (18.0, 45.0)
    targets: tuple = DEFAULT_TARGETS

    def truth_prior(self, base: float) -> PriorModel:
        """Slowly warming mean, an AR coefficient that drops halfway, constant innovations."""
        t = np.arange(self.n_years)
        mu = base + 0.6 * (t >= self.n_years // 2) + 0.004 * t
        m = np.where(t[:-1] < self.n_years // 2, 0.7, 0.4)
        r2 = np.full(self.n_years, 0.25)
        return PriorModel(mu, r2, m, self.first_year + t)


_BASE_TEMP = {"beijing": 12.0, "shanghai": 16.0, "hongkong": 22.0}


@dataclass
class SynthWorld:
    proxies: ProxyTable
    truth: dict            # location name -> truth series
    ensembles: dict        # location name -> EnsembleMatrix
    stations: dict         # location name -> (years, monthly rows)
    priors: dict


def generate_world(cfg: SynthConfig) -> SynthWorld:
    """Truth series at each target, a proxy field tied to it, ensembles and stations.

    Each year's latent field is a GP draw conditioned to equal the target's
    standardized truth anomaly (times ``sqrt(var_y)``) at every target site.
    """
    rng = np.random.default_rng(cfg.seed)
    p = cfg.params
    names = [t[0] for t in cfg.targets]
    t_lon = np.array([t[1] for t in cfg.targets])
    t_lat = np.array([t[2] for t in cfg.targets])
    priors, truth, anomalies = {}, {}, []
    for name in names:
        ar = cfg.truth_prior(_BASE_TEMP.get(name, 15.0))
        x = simulate_truth(ar, rng)
        priors[name], truth[name] = ar, x
        anomalies.append(np.sqrt(p.var_y) * (x - ar.mu) / np.sqrt(ar.marginal_variance()))
    anomalies = np.array(anomalies)   # (targets, years)

    years, lat, lon, idx = [], [], [], []
    k = len(names)
    for t in range(cfg.n_years):
        s_lon = rng.uniform(*cfg.lon_range, cfg.n_sites)
        s_lat = rng.uniform(*cfg.lat_range, cfg.n_sites)
        all_lon = np.concatenate([t_lon, s_lon])
        all_lat = np.concatenate([t_lat, s_lat])
        draw = sample_gp(p, all_lon, all_lat, rng)
        cov = p.var_y * np.exp(-distance_matrix(all_lon, all_lat, t_lon, t_lat) / p.range_alpha)
        # conditional simulation by residual kriging at the targets
        draw = draw + cov @ np.linalg.solve(cov[:k], anomalies[:, t] - draw[:k])
        z = simulate_proxies(draw[k:], p.var_eps, rng)
        years.append(np.full(cfg.n_sites, cfg.first_year + t))
        lat.append(s_lat)
        lon.append(s_lon)
        idx.append(z.astype(float))
    proxies = ProxyTable(np.concatenate(years), np.concatenate(lat), np.concatenate(lon), np.concatenate(idx))

    ensembles, stations = {}, {}
    for name in names:
        ensembles[name] = simulate_ensemble(priors[name], cfg.n_members, rng,
                                            [f"m{j + 1:02d}" for j in range(cfg.n_members)])
        st_years = priors[name].years[-cfg.station_years:]
        seasonal = 8.0 * np.cos(2 * np.pi * (np.arange(12) - 6.5) / 12)
        seasonal -= seasonal.mean()
        rows = []
        x = truth[name][-cfg.station_years:]
        for y, xv in zip(st_years, x):
            noise = cfg.obs_noise * rng.standard_normal(12)
            noise -= noise.mean()
            drop = rng.random() < 0.05     # an occasional incomplete year
            for mth in range(12):
                if drop and mth == 11:
                    continue
                rows.append((name, int(y), mth + 1, float(xv + seasonal[mth] + noise[mth])))
        stations[name] = rows
    return SynthWorld(proxies, truth, ensembles, stations, priors)


def write_world(world: SynthWorld, cfg: SynthConfig, out_dir) -> dict:
    """Write ``reaches.csv``, ``lme.csv`` (with cell coordinates), ``ghcn_monthly.csv`` and ``truth.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"reaches": out / "reaches.csv", "lme": out / "lme.csv",
             "ghcn": out / "ghcn_monthly.csv", "truth": out / "truth.csv"}
    write_proxy_csv(paths["reaches"], world.proxies)
    cells = []
    for name, lo, la in cfg.targets:
        ens = world.ensembles[name]
        cells.append(GridSeries(Location(lo, la), ens.years, ens.values, ens.members))
    write_lme_csv(paths["lme"], cells)
    with open(paths["ghcn"], "w", encoding="utf-8", newline="") as fh:
        fh.write("station,year,month,temp_c\n")
        for name, *_ in cfg.targets:
            for st, y, mth, temp in world.stations[name]:
                fh.write(f"{st},{y},{mth},{temp!r}\n")
    with open(paths["truth"], "w", encoding="utf-8", newline="") as fh:
        fh.write("location,year,temp_c\n")
        for name, *_ in cfg.targets:
            for y, x in zip(world.priors[name].years, world.truth[name]):
                fh.write(f"{name},{int(y)},{float(x)!r}\n")
    return paths

"""Kalman filter and Rauch-Tung-Striebel smoother for a scalar nonstationary
AR(1) state observed with heteroscedastic noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError
from .prior.model import PriorModel
from .qmap import CalibratedSeries

VAR_FLOOR = 1e-12


@dataclass
class FilterState:
    years: np.ndarray
    pred_mean: np.ndarray
    pred_var: np.ndarray
    filt_mean: np.ndarray
    filt_var: np.ndarray
    gain: np.ndarray
    observed: np.ndarray


@dataclass
class PosteriorSeries:
    years: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    meta: dict = field(default_factory=dict)


def align_observations(prior: PriorModel, obs: CalibratedSeries):
    """Spread observations onto the prior's years; absent years get ``nan``."""
    years = prior.years
    pos = {int(y): i for i, y in enumerate(years)}
    values = np.full(len(years), np.nan)
    err = np.full(len(years), np.inf)
    for y, x, v in zip(obs.years, obs.values, obs.err_var):
        i = pos.get(int(y))
        if i is None:
            raise DataError(f"observation year {int(y)} lies outside the prior's span "
                            f"{int(years[0])}-{int(years[-1])}")
        values[i], err[i] = x, v
    return values, err


def kalman_filter(prior: PriorModel, obs: CalibratedSeries) -> FilterState:
    """Forward pass; years without a finite observation skip the update.

    Year one starts from ``N(mu_1, r2_1)`` and is updated like any other year.
    """
    values, err = align_observations(prior, obs)
    if np.any(err < 0):
        raise DomainError("observation error variances must be non-negative")
    n = len(prior.mu)
    mu, r2, m = prior.mu, prior.r2, prior.m
    if np.any(r2 <= 0):
        raise DomainError("r2 must be positive")
    pm, pv, fm, fv, k = (np.empty(n) for _ in range(5))
    seen = np.isfinite(values) & np.isfinite(err)
    a, p = mu[0], r2[0]
    for t in range(n):
        if t > 0:
            a = mu[t] + m[t - 1] * (fm[t - 1] - mu[t - 1])
            p = m[t - 1] ** 2 * fv[t - 1] + r2[t]
        pm[t], pv[t] = a, max(p, VAR_FLOOR)
        if seen[t]:
            gain = pv[t] / (pv[t] + err[t])
            fm[t] = a + gain * (values[t] - a)
            fv[t] = max((1.0 - gain) * pv[t], VAR_FLOOR)
        else:
            gain = 0.0
            fm[t], fv[t] = a, pv[t]
        k[t] = gain
    return FilterState(prior.years.copy(), pm, pv, fm, fv, k, seen)


def kalman_smoother(prior: PriorModel, filt: FilterState) -> PosteriorSeries:
    """Backward pass with smoother gain ``J_t = P_{t|t} M_t / P_{t+1|t}``."""
    n = len(filt.filt_mean)
    if np.any(filt.pred_var <= 0):
        raise DomainError("predicted variances must be positive")
    mean = filt.filt_mean.copy()
    var = filt.filt_var.copy()
    for t in range(n - 2, -1, -1):
        j = filt.filt_var[t] * prior.m[t] / filt.pred_var[t + 1]
        mean[t] = filt.filt_mean[t] + j * (mean[t + 1] - filt.pred_mean[t + 1])
        var[t] = max(filt.filt_var[t] + j * j * (var[t + 1] - filt.pred_var[t + 1]), VAR_FLOOR)
    return PosteriorSeries(filt.years.copy(), mean, var)


def assimilate_series(prior: PriorModel, obs: CalibratedSeries) -> PosteriorSeries:
    """Filter then smooth; the filter pass is kept in ``meta``."""
    filt = kalman_filter(prior, obs)
    post = kalman_smoother(prior, filt)
    post.meta = {"gain": filt.gain, "filter": filt, "n_observed": int(filt.observed.sum())}
    return post

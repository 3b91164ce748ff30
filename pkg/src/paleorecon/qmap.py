"""Distribution-matching calibration of kriged indices to temperatures.

A normal fitted to the kriged index series is mapped onto a skew-normal
fitted to the simulated temperature series through ``g = F_x^{-1} o F_Y``.
Kriging MSPE is carried through ``g`` by the delta method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from .errors import DataError, DomainError, EstimationError

P_CLAMP = 1e-12
ERR_VAR_CEILING = 1e6


@dataclass(frozen=True)
class NormalFit:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise DomainError("sd must be positive")

    def cdf(self, y):
        return stats.norm.cdf(y, self.mean, self.sd)

    def sf(self, y):
        return stats.norm.sf(y, self.mean, self.sd)

    def pdf(self, y):
        return stats.norm.pdf(y, self.mean, self.sd)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class SkewNormalFit:
    """Density ``2/scale * phi(z) * Phi(shape * z)`` with ``z = (x - location)/scale``."""

    location: float
    scale: float
    shape: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DomainError("scale must be positive")

    def pdf(self, x):
        return stats.skewnorm.pdf(x, self.shape, self.location, self.scale)

    def logpdf(self, x):
        return stats.skewnorm.logpdf(x, self.shape, self.location, self.scale)

    def cdf(self, x):
        # Phi(z) - 2 T(z, shape), with Owen's T function
        z = (np.asarray(x, dtype=float) - self.location) / self.scale
        return np.clip(special.ndtr(z) - 2.0 * special.owens_t(z, self.shape), 0.0, 1.0)

    def sf(self, x):
        z = (np.asarray(x, dtype=float) - self.location) / self.scale
        return np.clip(special.ndtr(-z) + 2.0 * special.owens_t(z, self.shape), 0.0, 1.0)

    def isf(self, q, tol=1e-10):
        """Upper-tail quantiles, accurate for ``q`` near 0."""
        # X > x  iff  -X < -x, and -X is skew-normal with mirrored parameters
        mirror = SkewNormalFit(-self.location, self.scale, -self.shape)
        return -mirror.ppf(q, tol)

    def ppf(self, p, tol=1e-10):
        """Quantiles by safeguarded Newton inside brackets taken from a CDF table.

        Iteration stops once the CDF error is below ``tol / 100`` relative to
        the smaller tail probability ``min(p, 1 - p)``.
        """
        p = np.asarray(p, dtype=float)
        scalar = p.ndim == 0
        p = np.atleast_1d(p)
        if np.any((p <= 0) | (p >= 1)):
            raise DomainError("probabilities must lie strictly inside (0, 1)")
        # tails of the skew-normal are no heavier than the normal's, so +-60 scales
        # brackets every representable probability
        grid = self.location + self.scale * np.concatenate(
            [[-60.0], np.linspace(-12.0, 12.0, 4801), [60.0]])
        table = self.cdf(grid)
        k = np.clip(np.searchsorted(table, p, side="left"), 1, len(grid) - 1)
        lo, hi = grid[k - 1], grid[k]
        flo, fhi = table[k - 1], table[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(fhi > flo, lo + (p - flo) / (fhi - flo) * (hi - lo), 0.5 * (lo + hi))
        x = np.clip(x, lo, hi)
        for _ in range(100):
            err = self.cdf(x) - p
            lo = np.where(err < 0, x, lo)
            hi = np.where(err > 0, x, hi)
            done = (np.abs(err) <= 1e-2 * tol * np.minimum(p, 1.0 - p)) | (hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(x)))
            if np.all(done):
                break
            dens = self.pdf(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = x - err / dens
            ok = (dens > 0) & (newton > lo) & (newton < hi)
            x = np.where(done, x, np.where(ok, newton, 0.5 * (lo + hi)))
        return float(x[0]) if scalar else x

    def mean(self) -> float:
        return float(stats.skewnorm.mean(self.shape, self.location, self.scale))

    def as_dict(self) -> dict:
        return {"location": self.location, "scale": self.scale, "shape": self.shape}


def fit_normal(samples) -> NormalFit:
    """Maximum likelihood normal fit (standard deviation with divisor n)."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 2 or not np.all(np.isfinite(x)):
        raise DataError("need at least two finite samples")
    sd = float(np.sqrt(np.mean((x - x.mean()) ** 2)))
    if sd == 0:
        raise EstimationError("all samples are equal; the normal fit is degenerate")
    return NormalFit(float(x.mean()), sd)


def _skew_nll(theta, x):
    loc, log_scale, shape = theta
    scale = np.exp(log_scale)
    z = (x - loc) / scale
    ll = np.log(2.0) - log_scale + stats.norm.logpdf(z) + stats.norm.logcdf(shape * z)
    return -float(np.sum(ll))


def _moment_start(x):
    """Method-of-moments start, with the sample skewness clipped to the attainable range."""
    m, s = x.mean(), x.std()
    g = float(np.clip(stats.skew(x), -0.99, 0.99))
    # invert skewness = (4 - pi)/2 * (delta b)^3 / (1 - (delta b)^2)^{3/2}, b = sqrt(2/pi)
    r = np.cbrt(2.0 * abs(g) / (4.0 - np.pi))
    db = r / np.sqrt(1.0 + r * r)
    delta = np.sign(g) * db / np.sqrt(2.0 / np.pi)
    delta = float(np.clip(delta, -0.995, 0.995))
    omega = s / np.sqrt(1.0 - 2.0 * delta * delta / np.pi)
    xi = m - omega * delta * np.sqrt(2.0 / np.pi)
    return np.array([xi, np.log(omega), delta / np.sqrt(1.0 - delta * delta)])


def fit_skew_normal(samples) -> SkewNormalFit:
    """Maximum likelihood skew-normal fit from several starting points.

    The starts always include the plain normal (shape 0) so symmetric data
    cannot be pushed to a spurious skewed mode.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or len(x) < 10 or not np.all(np.isfinite(x)):
        raise DataError("need at least ten finite samples")
    sd = float(x.std())
    if sd == 0:
        raise EstimationError("all samples are equal; the skew-normal fit is degenerate")
    m = float(x.mean())
    starts = [np.array([m, np.log(sd), 0.0])]
    for a in (-3.0, 3.0):
        delta = a / np.sqrt(1 + a * a)
        omega = sd / np.sqrt(1 - 2 * delta * delta / np.pi)
        starts.append(np.array([m - omega * delta * np.sqrt(2 / np.pi), np.log(omega), a]))
    mom = _moment_start(x)
    best = None
    for method, pool in (("L-BFGS-B", starts + [mom]), ("Nelder-Mead", [mom])):
        for x0 in pool:
            res = optimize.minimize(_skew_nll, x0, args=(x,), method=method,
                                    options={"maxiter": 5000})
            if np.isfinite(res.fun) and (best is None or res.fun < best.fun - 1e-12):
                best = res
        if best is not None and best.success:
            break
    if best is None or not np.all(np.isfinite(best.x)):
        raise EstimationError("skew-normal fit failed from every start")
    loc, log_scale, shape = (float(v) for v in best.x)
    return SkewNormalFit(loc, float(np.exp(log_scale)), shape)


@dataclass(frozen=True)
class CalibrationMap:
    source: NormalFit
    target: SkewNormalFit

    def as_dict(self) -> dict:
        return {"source": self.source.as_dict(), "target": self.target.as_dict()}

    @classmethod
    def from_dict(cls, d) -> "CalibrationMap":
        return cls(NormalFit(**d["source"]), SkewNormalFit(**d["target"]))


def qmap(cmap: CalibrationMap, y, return_clamped: bool = False):
    """Map index values to the target scale through matching quantiles.

    Values above the source mean are matched through upper-tail
    probabilities so the map stays strictly increasing far into both tails.
    """
    y = np.asarray(y, dtype=float)
    upper = y > cmap.source.mean
    # tail probability on the near side of the median, never above 0.5
    p = np.where(upper, cmap.source.sf(y), cmap.source.cdf(y))
    clamped = p < P_CLAMP
    p = np.maximum(p, P_CLAMP)
    x = np.empty(y.shape)
    if np.any(~upper):
        x[~upper] = cmap.target.ppf(p[~upper])
    if np.any(upper):
        x[upper] = cmap.target.isf(p[upper])
    if y.ndim == 0:
        x, clamped = float(x), bool(clamped)
    return (x, clamped) if return_clamped else x


def _error_variance(cmap, y, mspe, ceiling):
    y = np.asarray(y, dtype=float)
    mspe = np.asarray(mspe, dtype=float)
    if np.any(mspe < 0):
        raise DomainError("mspe must be non-negative")
    g = np.asarray(qmap(cmap, y))
    dens = cmap.target.pdf(g)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = cmap.source.pdf(y) / dens
        v2 = ratio * ratio * mspe
    capped = ~np.isfinite(v2) | (v2 > ceiling)
    v2 = np.where(capped, np.where(mspe == 0, 0.0, ceiling), v2)
    capped &= mspe > 0
    return v2, capped


def propagate_error(cmap: CalibrationMap, y, mspe, ceiling: float = ERR_VAR_CEILING):
    """Delta-method error variance ``(f_Y(y) / f_x(g(y)))^2 * mspe``.

    Values whose target density underflows are capped at ``ceiling``.
    """
    v2, _ = _error_variance(cmap, y, mspe, ceiling)
    return float(v2) if v2.ndim == 0 else v2


@dataclass
class CalibratedSeries:
    """Noisy temperature observations with their error variances.

    Years absent from ``years`` (or with a non-finite value) count as missing.
    """

    years: np.ndarray
    values: np.ndarray
    err_var: np.ndarray
    clamped: np.ndarray = field(default=None)
    capped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        self.err_var = np.asarray(self.err_var, dtype=float)
        n = len(self.years)
        if len(self.values) != n or len(self.err_var) != n:
            raise DataError("years, values and err_var must have equal lengths")
        if np.any(self.err_var < 0):
            raise DomainError("error variances must be non-negative")
        if len(np.unique(self.years)) != n:
            raise DataError("calibrated series has duplicate years")
        if self.clamped is None:
            self.clamped = np.zeros(n, dtype=bool)
        if self.capped is None:
            self.capped = np.zeros(n, dtype=bool)

    @classmethod
    def empty(cls) -> "CalibratedSeries":
        return cls(np.zeros(0, int), np.zeros(0), np.zeros(0))


def calibrate_series(years, estimates, mspe, target_samples,
                     ceiling: float = ERR_VAR_CEILING) -> tuple[CalibratedSeries, CalibrationMap]:
    """Fit both distributions and push every kriged value through the map.

    ``target_samples`` are the simulated temperatures the map aims at (one
    value per year of the ensemble-mean series).
    """
    estimates = np.asarray(estimates, dtype=float)
    cmap = CalibrationMap(fit_normal(estimates), fit_skew_normal(target_samples))
    x, clamped = qmap(cmap, estimates, return_clamped=True)
    v2, capped = _error_variance(cmap, estimates, mspe, ceiling)
    return CalibratedSeries(years, np.atleast_1d(x), np.atleast_1d(v2),
                            np.atleast_1d(clamped), np.atleast_1d(capped)), cmap

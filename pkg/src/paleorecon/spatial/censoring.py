"""Moments of rounded (interval-censored) Gaussian variables and the Monte
Carlo calibration functions that undo the bias of naive variogram fits.

All Monte Carlo estimates use common random numbers: the standard normal
draws depend only on ``(seed, sample count)``, so every curve is a smooth,
bit-reproducible function of its argument.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import isotonic_regression, minimize_scalar
from scipy.stats import norm

from ..errors import CalibrationError, DomainError
from .covariance import CovarianceParams, round_index


@dataclass(frozen=True)
class MonteCarloConfig:
    seed: int = 20240601
    samples: int = 200_000            # f1 and f2
    pair_samples: int = 100_000       # f3 and kriging moments
    grid_size: int = 61               # points per calibration table
    rho_grid_size: int = 201          # correlation grid of the covariance table
    distance_grid_size: int = 200     # f3 integration grid
    range_multiple: float = 5.0       # f3 integral truncated at this many max ranges
    rel_se_threshold: float = 0.02

    def as_dict(self) -> dict:
        return asdict(self)


def _normals(seed: int, k: int, n: int, stream: int) -> np.ndarray:
    rng = np.random.default_rng([seed, stream])
    return rng.standard_normal((k, n))


def censored_mean(var_total: float) -> float:
    """Mean of the rounded variable when the latent value is N(0, var_total)."""
    if not var_total > 0:
        raise DomainError(f"var_total must be positive, got {var_total}")
    return float(-norm.cdf(-1.5 / np.sqrt(var_total)))


def _h(x):
    return round_index(x).astype(float)


# ---------------------------------------------------------------------------
# tabulated monotone functions


@dataclass
class TabulatedFunction:
    """A monotone non-decreasing function known on a grid.

    ``raw`` keeps the Monte Carlo values; ``values`` is their isotonic fit,
    used for evaluation and inversion by linear interpolation.
    """

    name: str
    grid: np.ndarray
    raw: np.ndarray
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.raw = np.asarray(self.raw, dtype=float)
        if self.values is None:
            self.values = isotonic_regression(self.raw).x
        self.values = np.asarray(self.values, dtype=float)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < self.grid[0]) or np.any(x > self.grid[-1]):
            raise CalibrationError(
                f"{self.name}: argument outside tabulated domain "
                f"[{self.grid[0]:.6g}, {self.grid[-1]:.6g}]")
        out = np.interp(x, self.grid, self.values)
        return float(out) if out.ndim == 0 else out

    @property
    def step(self) -> float:
        return float(np.max(np.diff(self.grid)))

    def as_dict(self) -> dict:
        return {"name": self.name, "grid": self.grid.tolist(), "raw": self.raw.tolist(),
                "values": self.values.tolist()}


def invert_calibration(f: TabulatedFunction, target: float) -> float:
    """Inverse of a tabulated monotone function by linear interpolation.

    Refuses to extrapolate: targets outside the tabulated range raise
    :class:`CalibrationError`.
    """
    lo, hi = float(f.values[0]), float(f.values[-1])
    if not lo <= target <= hi:
        raise CalibrationError(
            f"{f.name}: target {target:.6g} outside tabulated range [{lo:.6g}, {hi:.6g}]")
    v = f.values
    # first grid index whose value reaches target; flat stretches resolve to their left end
    k = int(np.searchsorted(v, target, side="left"))
    if k == 0:
        return float(f.grid[0])
    v0, v1 = v[k - 1], v[k]
    x0, x1 = f.grid[k - 1], f.grid[k]
    if v1 == v0:
        return float(x1)
    return float(x0 + (target - v0) * (x1 - x0) / (v1 - v0))


# ---------------------------------------------------------------------------
# f1: variance of the rounded variable


def calibrate_f1(var_total, mc: MonteCarloConfig = MonteCarloConfig()):
    """Monte Carlo ``var(h(Z*))`` with ``Z* ~ N(0, var_total)``.

    Vectorized over ``var_total``; the same draws are reused for every value.
    """
    v = np.asarray(var_total, dtype=float)
    if np.any(v < 0):
        raise DomainError("var_total must be non-negative")
    u = _normals(mc.seed, 1, mc.samples, stream=1)[0]
    out = np.array([_h(np.sqrt(vi) * u).var() for vi in np.atleast_1d(v)])
    return float(out[0]) if v.ndim == 0 else out


def tabulate_f1(target_max: float, mc: MonteCarloConfig = MonteCarloConfig()) -> TabulatedFunction:
    """Tabulate f1 on a grid wide enough that its values reach ``target_max``."""
    # var(h) is bounded by 9/4 as var_total grows
    if target_max >= 2.25:
        raise CalibrationError(f"f1 cannot reach {target_max:.4g}; its supremum is 2.25")
    vmax = max(2.0 * target_max, 0.5)
    for _ in range(40):
        grid = np.linspace(0.0, vmax, mc.grid_size)
        raw = calibrate_f1(grid, mc)
        table = TabulatedFunction("f1", grid, raw)
        if table.values[-1] > target_max:
            return table
        vmax *= 2.0
    raise CalibrationError(f"f1 table never reached {target_max:.4g}")


# ---------------------------------------------------------------------------
# f2: nugget of the rounded process


def _f2_draws(mc):
    return _normals(mc.seed, 3, mc.samples, stream=2)


def _f2_value(var_eps, total, draws):
    u0, u1, u2 = draws
    y = np.sqrt(total - var_eps) * u0
    se = np.sqrt(var_eps)
    return 0.5 * (_h(y + se * u1) - _h(y + se * u2)).var()


def calibrate_f2(var_eps, var_total_fixed: float, mc: MonteCarloConfig = MonteCarloConfig(),
                 f1: TabulatedFunction | None = None):
    """Monte Carlo ``var(h(Y + e1) - h(Y + e2)) / 2``.

    ``Y ~ N(0, f1^{-1}(var_total_fixed) - var_eps)`` and ``e1, e2`` are
    independent ``N(0, var_eps)``. ``var_total_fixed`` is the naive (rounded
    scale) total variance, so f1 is inverted first.
    """
    if f1 is None:
        f1 = tabulate_f1(var_total_fixed, mc)
    total = invert_calibration(f1, var_total_fixed)
    e = np.asarray(var_eps, dtype=float)
    if np.any(e < 0) or np.any(e >= total):
        raise CalibrationError(
            f"var_eps must lie in [0, {total:.6g}) (the calibrated total variance)")
    draws = _f2_draws(mc)
    out = np.array([_f2_value(ei, total, draws) for ei in np.atleast_1d(e)])
    return float(out[0]) if e.ndim == 0 else out


def tabulate_f2(var_total_fixed: float, mc: MonteCarloConfig = MonteCarloConfig(),
                f1: TabulatedFunction | None = None) -> TabulatedFunction:
    if f1 is None:
        f1 = tabulate_f1(var_total_fixed, mc)
    total = invert_calibration(f1, var_total_fixed)
    grid = np.linspace(0.0, 0.98 * total, mc.grid_size)
    raw = calibrate_f2(grid, var_total_fixed, mc, f1=f1)
    return TabulatedFunction("f2", grid, raw)


# ---------------------------------------------------------------------------
# covariance of rounded variables as a function of latent correlation


class CensoredCovariance:
    """Covariances of the rounded process for fixed ``(var_y, var_eps)``.

    ``cov(h(Z*(s)), h(Z*(s')))`` depends on the sites only through the
    latent correlation ``var_y * exp(-d / alpha) / var_total``, so it is
    estimated once on a correlation grid (common random numbers) and
    interpolated. ``cov(Y(s0), h(Z*(s)))`` equals ``cov(Y(s0), Z*(s))``
    times ``cov(Z*, h(Z*)) / var_total`` because the pair is jointly
    Gaussian; that ratio is estimated from the same draws.
    """

    def __init__(self, var_y: float, var_eps: float, mc: MonteCarloConfig = MonteCarloConfig()):
        if not var_y > 0 or not var_eps >= 0:
            raise DomainError("need var_y > 0 and var_eps >= 0")
        self.var_y = float(var_y)
        self.var_eps = float(var_eps)
        self.var_total = self.var_y + self.var_eps
        self.mc = mc
        self.mu_z = censored_mean(self.var_total)
        u1, u2 = _normals(mc.seed, 2, mc.pair_samples, stream=3)
        sd = np.sqrt(self.var_total)
        z1 = sd * u1
        h1 = _h(z1)
        self.var_z = float(h1.var())
        self.rel_se = float(np.std((h1 - h1.mean()) ** 2) / np.sqrt(len(h1)) / max(self.var_z, 1e-300))
        self.kappa = float(np.mean((z1 - z1.mean()) * (h1 - h1.mean())) / self.var_total)
        self.rho_max = self.var_y / self.var_total
        self.rho_grid = np.linspace(0.0, self.rho_max, mc.rho_grid_size)
        h1c = h1 - h1.mean()
        table = np.empty(len(self.rho_grid))
        for k, rho in enumerate(self.rho_grid):
            h2 = _h(sd * (rho * u1 + np.sqrt(1.0 - rho * rho) * u2))
            table[k] = np.mean(h1c * (h2 - h2.mean()))
        table[0] = 0.0          # independent pair, known exactly
        self.cov_table = table

    @property
    def warning(self) -> str | None:
        if self.rel_se > self.mc.rel_se_threshold:
            return (f"Monte Carlo relative standard error {self.rel_se:.3g} exceeds "
                    f"{self.mc.rel_se_threshold:.3g}; increase pair_samples")
        return None

    def cov_z(self, distance, alpha: float):
        """Covariance of rounded values at distinct sites separated by ``distance``."""
        rho = self.rho_max * np.exp(-np.asarray(distance, dtype=float) / alpha)
        return np.interp(rho, self.rho_grid, self.cov_table)

    def cov_yz(self, distance, alpha: float):
        return self.kappa * self.var_y * np.exp(-np.asarray(distance, dtype=float) / alpha)


# ---------------------------------------------------------------------------
# f3: apparent range of the rounded process


def _profile_range_fit(x, c, a_lo, a_hi):
    """Best exponential ``A exp(-x/a)`` for covariance values ``c`` on grid ``x``.

    The amplitude is profiled out in closed form; returns ``a``.
    """
    def loss(log_a):
        e = np.exp(-x / np.exp(log_a))
        ee = np.trapezoid(e * e, x)
        ce = np.trapezoid(c * e, x)
        return -ce * ce / ee

    res = minimize_scalar(loss, bounds=(np.log(a_lo), np.log(a_hi)), method="bounded",
                          options={"xatol": 1e-10, "maxiter": 500})
    return float(np.exp(res.x))


def _f3_distance_grid(alpha_max, mc):
    xmax = mc.range_multiple * alpha_max
    return np.concatenate([[0.0], np.geomspace(xmax * 1e-4, xmax, mc.distance_grid_size - 1)])


def calibrate_f3(alpha, params: CovarianceParams, mc: MonteCarloConfig = MonteCarloConfig(),
                 cov: CensoredCovariance | None = None, alpha_max: float | None = None):
    """Range of the exponential curve best fitting the rounded-process covariance.

    ``params`` supplies the (bias corrected) variances; its range is ignored.
    The L2 misfit is integrated on a log-spaced distance grid truncated at
    ``range_multiple * alpha_max``; the exponential's amplitude is free, as
    it is in the naive variogram fit this function emulates.
    """
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any(a <= 0):
        raise DomainError("alpha must be positive")
    if cov is None:
        cov = CensoredCovariance(params.var_y, params.var_eps, mc)
    x = _f3_distance_grid(alpha_max or float(a.max()), mc)
    out = np.array([_profile_range_fit(x, cov.cov_z(x, ai), ai / 50.0, ai * 50.0) for ai in a])
    return float(out[0]) if np.ndim(alpha) == 0 else out


def tabulate_f3(alpha_center: float, params: CovarianceParams,
                mc: MonteCarloConfig = MonteCarloConfig(),
                cov: CensoredCovariance | None = None, span: float = 4.0) -> TabulatedFunction:
    if cov is None:
        cov = CensoredCovariance(params.var_y, params.var_eps, mc)
    grid = np.geomspace(alpha_center / span, alpha_center * span, mc.grid_size)
    raw = calibrate_f3(grid, params, mc, cov=cov, alpha_max=float(grid[-1]))
    return TabulatedFunction("f3", grid, raw)


# ---------------------------------------------------------------------------
# full bias correction


@dataclass
class VariogramFit:
    initial: CovarianceParams
    corrected: CovarianceParams
    f1: TabulatedFunction | None = None
    f2: TabulatedFunction | None = None
    f3: TabulatedFunction | None = None


def bias_correct(initial: CovarianceParams, mc: MonteCarloConfig = MonteCarloConfig()) -> VariogramFit:
    """Map naive variogram estimates to latent-scale parameters.

    total = f1^{-1}(sill + nugget), nugget = f2^{-1}(nugget),
    partial sill = total - nugget, range = f3^{-1}(range).
    """
    naive_total = initial.var_y + initial.var_eps
    f1 = tabulate_f1(naive_total, mc)
    total = invert_calibration(f1, naive_total)
    f2 = tabulate_f2(naive_total, mc, f1=f1)
    var_eps = invert_calibration(f2, initial.var_eps)
    var_y = total - var_eps
    if not var_y > 0:
        raise CalibrationError("bias-corrected process variance is not positive")
    provisional = CovarianceParams(initial.range_alpha, var_y, var_eps)
    cov = CensoredCovariance(var_y, var_eps, mc)
    f3 = tabulate_f3(initial.range_alpha, provisional, mc, cov=cov)
    alpha = invert_calibration(f3, initial.range_alpha)
    return VariogramFit(initial, CovarianceParams(alpha, var_y, var_eps), f1, f2, f3)

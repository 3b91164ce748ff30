"""Nonstationary AR(1) prior fitted to an ensemble of simulated series by
penalized maximum likelihood (fused lasso on the AR coefficients and on the
mean path)."""

from __future__ import annotations

import itertools
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DomainError, EstimationError
from .fused import fused_lasso_1d, fused_lasso_tridiag

log = logging.getLogger(__name__)

R2_FLOOR = 1e-8
M_BOUND = 1.5


@dataclass
class EnsembleMatrix:
    """Simulated series, one column per member: ``values[t, j]``."""

    years: np.ndarray
    values: np.ndarray
    members: list = field(default=None)

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=int)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.years):
            raise DataError("values must have shape (len(years), members)")
        if self.values.shape[1] < 2:
            raise DataError("an ensemble needs at least two members")
        if not np.all(np.isfinite(self.values)):
            raise DataError("ensemble contains missing or non-finite cells")
        if self.members is None:
            self.members = [str(j) for j in range(self.values.shape[1])]

    @property
    def n_years(self) -> int:
        return self.values.shape[0]

    @property
    def n_members(self) -> int:
        return self.values.shape[1]

    def drop(self, j: int) -> "EnsembleMatrix":
        keep = [k for k in range(self.n_members) if k != j]
        return EnsembleMatrix(self.years, self.values[:, keep], [self.members[k] for k in keep])


@dataclass
class PriorModel:
    """``mu[t]``, ``r2[t]`` for every year and ``m[t]`` linking year t to t+1."""

    mu: np.ndarray
    r2: np.ndarray
    m: np.ndarray
    years: np.ndarray = field(default=None)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.r2 = np.asarray(self.r2, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        n = len(self.mu)
        if len(self.r2) != n or len(self.m) != max(n - 1, 0):
            raise DataError("PriorModel needs len(r2) == len(mu) and len(m) == len(mu) - 1")
        if self.years is None:
            self.years = np.arange(n)
        self.years = np.asarray(self.years, dtype=int)

    def marginal_variance(self) -> np.ndarray:
        v = np.empty(len(self.mu))
        v[0] = self.r2[0]
        for t in range(1, len(v)):
            v[t] = self.m[t - 1] ** 2 * v[t - 1] + self.r2[t]
        return v

    def check(self, m_bound: float = M_BOUND):
        if np.any(self.r2 <= 0):
            raise DomainError("r2 must be positive")
        if np.any(np.abs(self.m) >= m_bound):
            warnings.warn(f"|m_t| reaches {np.abs(self.m).max():.3g} (sanity bound {m_bound})")

    def as_dict(self) -> dict:
        return {"years": self.years.tolist(), "mu": self.mu.tolist(), "r2": self.r2.tolist(),
                "m": self.m.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorModel":
        return cls(d["mu"], d["r2"], d["m"], d.get("years"))


@dataclass(frozen=True)
class PenaltyConfig:
    lambda1: float = 0.0   # sparsity of m
    lambda2: float = 0.0   # fusion of m
    lambda3: float = 0.0   # fusion of mu

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise DomainError("penalties must be non-negative")

    @property
    def total(self) -> float:
        return self.lambda1 + self.lambda2 + self.lambda3

    def as_tuple(self):
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass
class CvReport:
    grid: list
    scores: list          # mean held-out negative log-likelihood; nan marks failed points
    best: PenaltyConfig

    def as_rows(self):
        return [{"lambda1": p.lambda1, "lambda2": p.lambda2, "lambda3": p.lambda3,
                 "score": (None if not np.isfinite(s) else float(s))}
                for p, s in zip(self.grid, self.scores)]


# ---------------------------------------------------------------------------
# likelihood and objective


def _residuals(x, model):
    e = x - model.mu if x.ndim == 1 else x - model.mu[:, None]
    res = e.copy()
    if x.ndim == 1:
        res[1:] = e[1:] - model.m * e[:-1]
    else:
        res[1:] = e[1:] - model.m[:, None] * e[:-1]
    return res


def neg_log_lik(x, model: PriorModel) -> float:
    """Negative log-likelihood of one series, additive constant dropped."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.mu.shape:
        raise DataError("series length does not match the model")
    if np.any(model.r2 <= 0):
        raise DomainError("r2 must be positive")
    res = _residuals(x, model)
    return float(0.5 * np.sum(np.log(model.r2)) + 0.5 * np.sum(res * res / model.r2))


def _sum_neg_log_lik(values, model):
    if np.any(model.r2 <= 0):
        raise DomainError("r2 must be positive")
    res = _residuals(values, model)
    j = values.shape[1]
    return float(0.5 * j * np.sum(np.log(model.r2)) + 0.5 * np.sum(np.sum(res * res, axis=1) / model.r2))


def penalty_value(model: PriorModel, pen: PenaltyConfig) -> float:
    return float(pen.lambda1 * np.abs(model.m).sum()
                 + pen.lambda2 * np.abs(np.diff(model.m)).sum()
                 + pen.lambda3 * np.abs(np.diff(model.mu)).sum())


def penalized_objective(X: EnsembleMatrix, model: PriorModel, pen: PenaltyConfig) -> float:
    return _sum_neg_log_lik(X.values, model) + penalty_value(model, pen)


# ---------------------------------------------------------------------------
# block coordinate descent


def _update_m(values, mu, r2, pen):
    e = values - mu[:, None]
    prev, cur = e[:-1], e[1:]
    ss = np.sum(prev * prev, axis=1)
    if np.any(ss <= 0):
        raise EstimationError("a year has zero ensemble spread; its AR coefficient is unidentified")
    a = ss / r2[1:]
    b = np.sum(cur * prev, axis=1) / ss
    return fused_lasso_1d(a, b, pen.lambda1, pen.lambda2)


def _update_mu(values, mu, r2, m, pen):
    j = values.shape[1]
    w = j / r2
    # residual_t = c_t - (L mu)_t with (L mu)_t = mu_t - m_{t-1} mu_{t-1}
    c = values.copy()
    c[1:] -= m[:, None] * values[:-1]
    cbar = c.mean(axis=1)
    diag = w.copy()
    diag[:-1] += w[1:] * m * m
    off = -w[1:] * m
    q = w * cbar
    q[:-1] -= m * w[1:] * cbar[1:]
    return fused_lasso_tridiag(diag, off, q, pen.lambda3, x0=mu)


def _update_r2(values, mu, m):
    res = _residuals(values, PriorModel(mu, np.ones_like(mu), m))
    r2 = np.mean(res * res, axis=1)
    floored = r2 < R2_FLOOR
    if np.any(floored):
        warnings.warn(f"r2 floored at {R2_FLOOR:g} for {int(floored.sum())} year(s)")
        r2 = np.maximum(r2, R2_FLOOR)
    return r2


def _canonical_order(values):
    # member order must not influence floating-point sums
    order = np.lexsort(values[::-1])
    return values[:, order]


@dataclass
class FitTrace:
    objectives: list
    converged: bool


def fit_prior(X: EnsembleMatrix, pen: PenaltyConfig = PenaltyConfig(), max_sweeps: int = 500,
              rtol: float = 1e-8, descent_tol: float = 1e-10, return_trace: bool = False):
    """Penalized ML fit of the nonstationary AR(1) by block coordinate descent.

    Sweeps update m, then mu, then r2, each by an exact minimization. The
    objective is asserted non-increasing after every block.
    """
    values = _canonical_order(X.values)
    n = values.shape[0]
    if n < 2:
        raise DataError("need at least two years")
    mu = values.mean(axis=1)
    r2 = np.maximum(values.var(axis=1), R2_FLOOR)
    m = np.zeros(n - 1)
    model = PriorModel(mu, r2, m, X.years)
    fx = EnsembleMatrix(X.years, values)
    obj = penalized_objective(fx, model, pen)
    trace = [obj]
    converged = False

    def checked(new_model, old):
        val = penalized_objective(fx, new_model, pen)
        if val > old + descent_tol * max(1.0, abs(old)):
            raise EstimationError(
                f"coordinate descent increased the objective from {old!r} to {val!r}", best=new_model)
        return val

    for _ in range(max_sweeps):
        start = obj
        m = _update_m(values, mu, r2, pen)
        obj = checked(PriorModel(mu, r2, m, X.years), obj)
        mu = _update_mu(values, mu, r2, m, pen)
        obj = checked(PriorModel(mu, r2, m, X.years), obj)
        r2 = _update_r2(values, mu, m)
        obj = checked(PriorModel(mu, r2, m, X.years), obj)
        trace.append(obj)
        if abs(start - obj) <= rtol * max(1.0, abs(start)):
            converged = True
            break
    if not converged:
        log.warning("fit_prior stopped after %d sweeps without meeting rtol=%g", max_sweeps, rtol)
    model = PriorModel(mu, r2, m, X.years)
    if return_trace:
        return model, FitTrace(trace, converged)
    return model


def unpenalized_ml(X: EnsembleMatrix) -> PriorModel:
    """Closed-form maximum likelihood estimate without penalties."""
    v = X.values
    mu = v.mean(axis=1)
    e = v - mu[:, None]
    m = np.sum(e[1:] * e[:-1], axis=1) / np.sum(e[:-1] ** 2, axis=1)
    res = e.copy()
    res[1:] = e[1:] - m[:, None] * e[:-1]
    return PriorModel(mu, np.mean(res ** 2, axis=1), m, X.years)


# ---------------------------------------------------------------------------
# cross-validation


def default_grid(n_per_axis: int = 4, lo: float = 1e-2, hi: float = 1e2) -> list[PenaltyConfig]:
    ladder = np.geomspace(lo, hi, n_per_axis)
    return [PenaltyConfig(*map(float, t)) for t in itertools.product(ladder, ladder, ladder)]


def _cv_score(args):
    X, pen, max_sweeps = args
    scores = []
    for l in range(X.n_members):
        model = fit_prior(X.drop(l), pen, max_sweeps=max_sweeps)
        scores.append(neg_log_lik(X.values[:, l], model))
    return float(np.mean(scores))


def cross_validate(X: EnsembleMatrix, grid: list[PenaltyConfig], max_sweeps: int = 500,
                   workers: int = 1) -> CvReport:
    """Leave-one-member-out cross-validation over a penalty grid.

    Grid points whose fits fail are scored nan and excluded. Ties go to the
    larger total penalty.
    """
    if not grid:
        raise DomainError("penalty grid is empty")
    jobs = [(X, p, max_sweeps) for p in grid]
    scores = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_cv_score, j) for j in jobs]
            for p, fut in zip(grid, futures):
                scores.append(_collect(p, fut.result))
    else:
        for p, job in zip(grid, jobs):
            scores.append(_collect(p, lambda job=job: _cv_score(job)))
    ok = [k for k, s in enumerate(scores) if np.isfinite(s)]
    if not ok:
        raise EstimationError("every grid point failed during cross-validation")
    best = min(ok, key=lambda k: (scores[k], -grid[k].total))
    return CvReport(list(grid), scores, grid[best])


def _collect(pen, run):
    try:
        return run()
    except (EstimationError, DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
        warnings.warn(f"cross-validation point {pen.as_tuple()} failed and is excluded: {exc}")
        return float("nan")

"""Independent reference computations shared by the tests.

These use direct quadrature or dense linear algebra rather than any code
path of the package.
"""

import math

import numpy as np
from scipy import integrate, stats

CUTS = (-1.5, -0.5, 0.5)
CELLS = ((-np.inf, -1.5, -2.0), (-1.5, -0.5, -1.0), (-0.5, 0.5, 0.0), (0.5, np.inf, 1.0))


def rounded_mean(var_total):
    s = math.sqrt(var_total)
    return -2.0 + sum(stats.norm.sf(c / s) for c in CUTS)


def _cond_mean_h(mean, sd):
    """E[h(X)] for X ~ N(mean, sd^2), with h the four-cell rounding."""
    return -2.0 + sum(stats.norm.sf((c - mean) / sd) for c in CUTS)


def rounded_cov(var_total, rho):
    """cov(h(Z1), h(Z2)) for a standard bivariate normal pair scaled to var_total."""
    s = math.sqrt(var_total)
    mu = rounded_mean(var_total)
    if rho >= 1.0:
        return sum(k * k * (stats.norm.cdf(b / s) - stats.norm.cdf(a / s)) for a, b, k in CELLS) - mu * mu
    cond_sd = s * math.sqrt(1.0 - rho * rho)
    total = 0.0
    for a, b, k in CELLS:
        if k == 0.0:
            continue
        f = lambda z: stats.norm.pdf(z, scale=s) * _cond_mean_h(rho * z, cond_sd)
        lo, hi = max(a, -12 * s), min(b, 12 * s)
        total += k * integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
    return total - mu * mu


def latent_rounded_cov(var_y, var_eps, nodes=200):
    """cov(Y, h(Y + eps)) by Gauss-Hermite quadrature over Y."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    y = math.sqrt(var_y) * x
    g = _cond_mean_h(y, math.sqrt(var_eps))
    return float(np.sum(w * y * g) / math.sqrt(2 * math.pi))


def simple_kriging(cov_sites, cov_target, var_y, z):
    """Dense-solve simple kriging predictor and MSPE."""
    w = np.linalg.solve(cov_sites, cov_target)
    return float(w @ z), float(var_y - cov_target @ w)


def fused_kkt_residual(grad, x, lam_sparse, lam_fuse, tol=1e-9):
    """Smallest violation of the optimality conditions of a 1-D fused lasso.

    ``grad`` is the gradient of the smooth part at ``x``. Subgradients of the
    sparse and fused terms are chosen by bounded least squares, so a value
    near zero certifies that ``x`` is optimal.
    """
    from scipy.optimize import lsq_linear

    n = len(x)
    dx = np.diff(x)
    # columns: sparse subgradient s_t, fused subgradient v_t (enters as D^T v)
    d_t = np.zeros((n, n - 1))
    d_t[np.arange(n - 1), np.arange(n - 1)] = -1.0
    d_t[np.arange(1, n), np.arange(n - 1)] = 1.0
    a = np.hstack([np.eye(n), d_t])
    lo = np.concatenate([np.full(n, -lam_sparse), np.full(n - 1, -lam_fuse)])
    hi = -lo.copy()
    fixed = np.concatenate([np.where(np.abs(x) > tol, np.sign(x) * lam_sparse, np.nan),
                            np.where(np.abs(dx) > tol, np.sign(dx) * lam_fuse, np.nan)])
    rhs = -np.asarray(grad, dtype=float)
    free = np.isnan(fixed)
    rhs = rhs - a[:, ~free] @ fixed[~free]
    if not free.any():
        return float(np.abs(rhs).max())
    lo_f, hi_f = lo[free], hi[free]
    hi_f = np.where(hi_f > lo_f, hi_f, lo_f + 1e-300)
    res = lsq_linear(a[:, free], rhs, bounds=(lo_f, hi_f), tol=1e-14, lsmr_tol="auto", max_iter=10_000)
    return float(np.abs(a[:, free] @ res.x - rhs).max())


def fused_lasso_dual_oracle(a, b, lam_sparse, lam_fuse, iters=200_000):
    """Weighted sparse fused lasso solved by accelerated projected gradient on its dual.

    With ``K = [ls I; lf D]`` the primal solution is ``b - K'u / a`` where
    ``u`` minimizes ``1/2 u'K A^{-1} K'u - u'Kb`` over the box ``[-1, 1]``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(a)
    d = np.diff(np.eye(n), axis=0)
    k = np.vstack([lam_sparse * np.eye(n), lam_fuse * d])
    h = k @ (k.T / a[:, None])
    lin = k @ b
    step = 1.0 / max(np.linalg.eigvalsh(h).max(), 1e-300)
    u = np.zeros(len(k))
    y, t = u.copy(), 1.0
    for _ in range(iters):
        u_new = np.clip(y - step * (h @ y - lin), -1.0, 1.0)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = u_new + (t - 1.0) / t_new * (u_new - u)
        u, t = u_new, t_new
    return b - k.T @ u / a

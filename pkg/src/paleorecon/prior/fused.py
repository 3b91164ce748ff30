"""Exact solvers for one-dimensional fused lasso problems.

``fused_lasso_1d`` handles separable weighted quadratics with both a sparsity
and a fusion penalty by dynamic programming over the derivative of the
min-convolution messages. ``fused_lasso_tridiag`` handles a tridiagonal
quadratic with a fusion penalty by ADMM whose iterates are polished into an
exact solution with primal-dual active set steps over the fused/jump
partition.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack, solve_banded

from ..errors import DomainError


class _Derivative:
    """Non-decreasing piecewise-linear function with jumps.

    Left of all knots it equals ``al * x + bl``; crossing knot ``k`` adds
    ``da[k] * x + db[k]``. ``ar, br`` describe the part right of all knots.
    """

    __slots__ = ("xs", "da", "db", "al", "bl", "ar", "br")

    def __init__(self):
        self.xs, self.da, self.db = [], [], []
        self.al = self.bl = self.ar = self.br = 0.0

    def add_quadratic(self, a, b, lam_sparse):
        # derivative of a/2 (x - b)^2 + lam_sparse |x|
        self.al += a
        self.ar += a
        self.bl += -a * b - lam_sparse
        self.br += -a * b + lam_sparse
        if lam_sparse > 0:
            xs = self.xs
            lo, hi = 0, len(xs)
            while lo < hi:
                mid = (lo + hi) // 2
                if xs[mid] < 0.0:
                    lo = mid + 1
                else:
                    hi = mid
            xs.insert(lo, 0.0)
            self.da.insert(lo, 0.0)
            self.db.insert(lo, 2.0 * lam_sparse)

    def solve_from_left(self, level, pop):
        """Smallest x with f'(x) >= level; consumes knots left of it when ``pop``."""
        a, b = self.al, self.bl
        xs, da, db = self.xs, self.da, self.db
        i = 0
        while i < len(xs):
            x = xs[i]
            if a * x + b >= level:
                break
            a2, b2 = a + da[i], b + db[i]
            i += 1
            if a2 * x + b2 >= level:
                if pop:
                    del xs[:i], da[:i], db[:i]
                return x, a2, b2
            a, b = a2, b2
        x = (level - b) / a if a > 0 else (xs[i - 1] if i else 0.0)
        # rounding must not carry the crossing outside its bracketing knots
        if i:
            x = max(x, xs[i - 1])
        if i < len(xs):
            x = min(x, xs[i])
        if pop:
            del xs[:i], da[:i], db[:i]
        return x, a, b

    def clip(self, lam):
        """Replace f' by clip(f', -lam, lam); returns the two clipping points."""
        lo, a, b = self.solve_from_left(-lam, pop=True)
        self.xs.insert(0, lo)
        self.da.insert(0, a)
        self.db.insert(0, b + lam)
        self.al, self.bl = 0.0, -lam

        a, b = self.ar, self.br
        xs, da, db = self.xs, self.da, self.db
        hi = None
        while xs:
            x = xs[-1]
            if a * x + b <= lam:
                break
            a2, b2 = a - da[-1], b - db[-1]
            xs.pop(), da.pop(), db.pop()
            # left of every knot the clipped derivative is -lam
            if not xs or a2 * x + b2 <= lam:
                hi = x
                a, b = a2, b2
                break
            a, b = a2, b2
        if hi is None:
            hi = (lam - b) / a if a > 0 else lo
            if xs:
                hi = max(hi, xs[-1])
        hi = max(hi, lo)
        xs.append(hi)
        da.append(-a)
        db.append(lam - b)
        self.ar, self.br = 0.0, lam
        return lo, hi


def fused_lasso_1d(weights, targets, lambda_sparse=0.0, lambda_fuse=0.0) -> np.ndarray:
    """Minimize ``1/2 sum a_t (x_t - b_t)^2 + ls sum |x_t| + lf sum |x_{t+1} - x_t|``.

    Exact up to floating point; runs in amortized linear time.
    """
    a = np.asarray(weights, dtype=float)
    b = np.asarray(targets, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("weights and targets must be 1-D arrays of equal length")
    if np.any(~(a > 0)) or not np.all(np.isfinite(b)):
        raise DomainError("weights must be positive and targets finite")
    if lambda_sparse < 0 or lambda_fuse < 0:
        raise DomainError("penalties must be non-negative")
    n = len(a)
    if n == 0:
        return np.zeros(0)
    if lambda_fuse == 0:
        return np.sign(b) * np.maximum(np.abs(b) - lambda_sparse / a, 0.0)
    f = _Derivative()
    lows = np.empty(n - 1)
    highs = np.empty(n - 1)
    al, bl, ls, lf = a.tolist(), b.tolist(), float(lambda_sparse), float(lambda_fuse)
    for t in range(n - 1):
        f.add_quadratic(al[t], bl[t], ls)
        lows[t], highs[t] = f.clip(lf)
    f.add_quadratic(al[-1], bl[-1], ls)
    x = np.empty(n)
    x[-1] = f.solve_from_left(0.0, pop=False)[0]
    for t in range(n - 2, -1, -1):
        x[t] = min(max(x[t + 1], lows[t]), highs[t])
    return x


# ---------------------------------------------------------------------------
# tridiagonal quadratic + fusion penalty


def _tridiag_matvec(diag, off, x):
    y = diag * x
    y[:-1] += off * x[1:]
    y[1:] += off * x[:-1]
    return y


def tridiag_objective(diag, off, q, lam, x) -> float:
    return float(0.5 * x @ _tridiag_matvec(diag, off, x) - q @ x + lam * np.abs(np.diff(x)).sum())


def _dual_from_primal(diag, off, q, x):
    # stationarity Qx - q + D'u = 0 with (D'u)_s = u_{s-1} - u_s
    return np.cumsum(_tridiag_matvec(diag, off, x) - q)[:-1]


def _solve_partition(diag, off, q, lam, signs):
    """Primal solution for a fixed fused (0) / jump (+-1) edge pattern."""
    n = len(diag)
    starts = np.concatenate([[0], np.nonzero(signs)[0] + 1])
    group = np.zeros(n, dtype=np.int64)
    group[starts[1:]] = 1
    group = np.cumsum(group)
    k = len(starts)
    gd = np.bincount(group, weights=diag, minlength=k)
    # within-group off-diagonal mass counts twice on the diagonal
    same = group[:-1] == group[1:]
    gd += 2.0 * np.bincount(group[:-1][same], weights=off[same], minlength=k)
    goff = np.zeros(max(k - 1, 0))
    cross = ~same
    np.add.at(goff, group[:-1][cross], off[cross])
    rhs = np.bincount(group, weights=q, minlength=k)
    # jump edge e (between groups g and g+1) carries u_e = lam * sign
    u_jump = lam * signs[cross]
    rhs[:-1] += u_jump
    rhs[1:] -= u_jump
    if k == 1:
        beta = rhs / gd
    else:
        ab = np.zeros((3, k))
        ab[0, 1:] = goff
        ab[1] = gd
        ab[2, :-1] = goff
        beta = solve_banded((1, 1), ab, rhs)
    return beta[group]


def _is_optimal(diag, off, q, lam, x, tol):
    u = _dual_from_primal(diag, off, q, x)
    dx = np.diff(x)
    scale = max(lam, 1.0) * tol
    jump = np.abs(dx) > tol * max(1.0, float(np.abs(x).max()))
    ok_fused = np.all(np.abs(u[~jump]) <= lam + scale)
    ok_jump = np.all(np.abs(u[jump] - lam * np.sign(dx[jump])) <= scale)
    return bool(ok_fused and ok_jump)


def _pdas(diag, off, q, lam, signs, c, max_iter):
    """Primal-dual active set steps from an edge pattern; locally exact."""
    x = _solve_partition(diag, off, q, lam, signs)
    seen = {signs.tobytes()}
    for _ in range(max_iter):
        u = _dual_from_primal(diag, off, q, x)
        u[signs != 0] = lam * signs[signs != 0]
        y = u + c * np.diff(x)
        new = np.where(np.abs(y) > lam, np.sign(y), 0.0)
        key = new.tobytes()
        if np.array_equal(new, signs) or key in seen:
            break
        seen.add(key)
        signs = new
        x = _solve_partition(diag, off, q, lam, signs)
    return x


def _admm(diag, off, q, lam, x, tol, max_iter=20000, check_every=25):
    """ADMM on the split z = Dx, polishing the support of z every few steps.

    Returns an exact solution when a polish passes the optimality check,
    otherwise the last ADMM iterate.
    """
    n = len(diag)
    rho = float(np.mean(diag))
    # Q + rho D'D is tridiagonal and factored once
    dd = diag + rho * np.concatenate([[1.0], np.full(n - 2, 2.0), [1.0]])
    oo = off - rho
    dl, d, du, du2, ipiv, info = lapack.dgttrf(oo.copy(), dd, oo.copy())
    if info != 0:
        raise np.linalg.LinAlgError("tridiagonal factorization failed")
    z = np.diff(x)
    w = np.zeros(n - 1)
    for it in range(max_iter):
        v = rho * (z - w)
        rhs = q.copy()
        rhs[:-1] -= v
        rhs[1:] += v
        x = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)[0]
        zt = np.diff(x) + w
        z = np.sign(zt) * np.maximum(np.abs(zt) - lam / rho, 0.0)
        w = zt - z
        if it % check_every == check_every - 1:
            xp = _pdas(diag, off, q, lam, np.sign(z), rho, 10)
            if _is_optimal(diag, off, q, lam, xp, tol):
                return xp, True
    return x, False


def fused_lasso_tridiag(diag, off, q, lam, x0=None, tol=1e-9) -> np.ndarray:
    """Minimize ``1/2 x'Qx - q'x + lam sum |x_{t+1} - x_t|`` for tridiagonal PD ``Q``.

    ``diag`` is Q's diagonal, ``off`` its first off-diagonal. The result never
    has a larger objective than ``x0`` when a start is given.
    """
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(diag)
    if lam < 0:
        raise DomainError("lam must be non-negative")
    if n == 1:
        return q / diag
    if lam == 0:
        ab = np.zeros((3, n))
        ab[0, 1:] = off
        ab[1] = diag
        ab[2, :-1] = off
        return solve_banded((1, 1), ab, q)

    start = None if x0 is None else np.asarray(x0, dtype=float)
    f_start = np.inf if start is None else tridiag_objective(diag, off, q, lam, start)
    c = float(np.mean(diag))
    x = start if start is not None else np.zeros(n)

    # a warm start usually pins down the pattern after a few active set steps
    signs = np.sign(np.where(np.abs(np.diff(x)) > tol, np.diff(x), 0.0))
    best = _pdas(diag, off, q, lam, signs, c, 20)
    if not _is_optimal(diag, off, q, lam, best, tol):
        best, exact = _admm(diag, off, q, lam, x, tol)
        if not exact:
            best = _mm_descent(diag, off, q, lam, best)
    if tridiag_objective(diag, off, q, lam, best) > f_start:
        return start
    return best


def _mm_descent(diag, off, q, lam, x, iters=5000, tol=1e-13):
    """Majorize-minimize with a Gershgorin diagonal bound; monotone but slow."""
    d = diag + np.concatenate([np.abs(off), [0.0]]) + np.concatenate([[0.0], np.abs(off)])
    f_old = tridiag_objective(diag, off, q, lam, x)
    for _ in range(iters):
        grad = _tridiag_matvec(diag, off, x) - q
        x = fused_lasso_1d(d, x - grad / d, 0.0, lam)
        f_new = tridiag_objective(diag, off, q, lam, x)
        if f_old - f_new <= tol * max(1.0, abs(f_old)):
            break
        f_old = f_new
    return x

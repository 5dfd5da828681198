"""Hot numerical kernels.

Each kernel exists twice: a loop version compiled with numba (``*_nb``) and a
vectorized numpy version (``*_np``).  The unsuffixed names are bound to one of
the two at import time, depending on :data:`quasipart._accel.USE_NUMBA`.
Both variants are always importable so they can be compared directly.
"""

import math

import numpy as np
from scipy.optimize import fminbound

from ._accel import USE_NUMBA, njit

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LN2 = math.log(2.0)


def _log_half_moment(alpha, sigma):
    # log of  int_0^inf x^alpha exp(-x^2 / (2 sigma^2)) dx
    return 0.5 * (alpha - 1.0) * LN2 + (alpha + 1.0) * math.log(sigma) + math.lgamma(0.5 * (alpha + 1.0))


_log_half_moment_nb = njit(_log_half_moment)


def _fold_logpdf(log_c_neg, log_c_pos, alpha_neg, alpha_pos, sigma):
    # value at the quasi-center: +inf if an active side has a negative exponent,
    # 0 if either exponent is positive, otherwise the mean of the one-sided limits
    if (log_c_neg > -np.inf and alpha_neg < 0.0) or (log_c_pos > -np.inf and alpha_pos < 0.0):
        return np.inf
    if alpha_neg > 0.0 or alpha_pos > 0.0:
        return -np.inf
    c = 0.5 * (math.exp(log_c_neg) + math.exp(log_c_pos))
    return math.log(c) - math.log(sigma) - LOG_SQRT_2PI


_fold_logpdf_nb = njit(_fold_logpdf)


# ---------------------------------------------------------------------------
# component log densities
# ---------------------------------------------------------------------------


@njit
def _component_logpdf_nb(X, a, alpha_neg, alpha_pos, sigma, log_c_neg, log_c_pos):
    n, d = X.shape
    K = a.shape[0]
    out = np.zeros((n, K))
    for k in range(K):
        for j in range(d):
            s = sigma[k, j]
            inv2s2 = 0.5 / (s * s)
            norm = math.log(s) + LOG_SQRT_2PI
            lcn = log_c_neg[k, j]
            lcp = log_c_pos[k, j]
            an = alpha_neg[k, j]
            ap = alpha_pos[k, j]
            at_fold = _fold_logpdf_nb(lcn, lcp, an, ap, s)
            ak = a[k, j]
            for i in range(n):
                if out[i, k] == -np.inf:
                    continue
                y = X[i, j] - ak
                if y < 0.0:
                    v = lcn + an * math.log(-y) - y * y * inv2s2 - norm
                elif y > 0.0:
                    v = lcp + ap * math.log(y) - y * y * inv2s2 - norm
                else:
                    v = at_fold
                if v == -np.inf:
                    out[i, k] = -np.inf  # a vanishing factor beats a pole
                else:
                    out[i, k] += v
    return out


def _component_logpdf_np(X, a, alpha_neg, alpha_pos, sigma, log_c_neg, log_c_pos):
    # (n, 1, d) against (1, K, d)
    y = X[:, None, :] - a[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        logabs = np.log(np.abs(y))
        neg = log_c_neg + alpha_neg * logabs
        pos = log_c_pos + alpha_pos * logabs
    base = -0.5 * (y / sigma) ** 2 - np.log(sigma) - LOG_SQRT_2PI
    terms = np.where(y < 0.0, neg, pos) + base
    zero = y == 0.0
    if np.any(zero):
        fold = np.empty(a.shape)
        for k in range(a.shape[0]):
            for j in range(a.shape[1]):
                fold[k, j] = _fold_logpdf(log_c_neg[k, j], log_c_pos[k, j], alpha_neg[k, j],
                                          alpha_pos[k, j], sigma[k, j])
        terms = np.where(zero, np.broadcast_to(fold, terms.shape), terms)
    with np.errstate(invalid="ignore"):
        out = terms.sum(axis=2)
    out[np.any(terms == -np.inf, axis=2)] = -np.inf  # a vanishing factor beats a pole
    return out


# ---------------------------------------------------------------------------
# marginal M-step
#
# The quasi-center of one marginal is found by a bounded scalar search of the
# objective with both exponents, the mass split and sigma profiled out.
# A step is kept only if it does not lower the objective.
# ---------------------------------------------------------------------------


def _profile_sigma(Wn, Wp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi):
    D = (alpha_neg + 1.0) * Wn + (alpha_pos + 1.0) * Wp
    if D <= 0.0 or Q <= 0.0:
        return sigma_lo
    s = math.sqrt(Q / D)
    return min(max(s, sigma_lo), sigma_hi)


_profile_sigma_nb = njit(_profile_sigma)


def _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi):
    # responsibility-weighted log-likelihood with mass split and sigma profiled out
    W = Wn + Wp
    if W <= 0.0:
        return 0.0
    s = _profile_sigma(Wn, Wp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    val = -0.5 * Q / (s * s)
    if Wn > 0.0:
        val += Wn * math.log(Wn / W) + alpha_neg * Ln - Wn * _log_half_moment(alpha_neg, s)
    if Wp > 0.0:
        val += Wp * math.log(Wp / W) + alpha_pos * Lp - Wp * _log_half_moment(alpha_pos, s)
    return val


@njit
def _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi):
    W = Wn + Wp
    if W <= 0.0:
        return 0.0
    s = _profile_sigma_nb(Wn, Wp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    val = -0.5 * Q / (s * s)
    if Wn > 0.0:
        val += Wn * math.log(Wn / W) + alpha_neg * Ln - Wn * _log_half_moment_nb(alpha_neg, s)
    if Wp > 0.0:
        val += Wp * math.log(Wp / W) + alpha_pos * Lp - Wp * _log_half_moment_nb(alpha_pos, s)
    return val


@njit
def _side_stats_nb(x, r, a, log_floor):
    Wn = 0.0
    Wp = 0.0
    Ln = 0.0
    Lp = 0.0
    Q = 0.0
    for i in range(x.shape[0]):
        w = r[i]
        if w == 0.0:
            continue
        y = x[i] - a
        if y < 0.0:
            Wn += w
            Ln += w * max(math.log(-y), log_floor[i])
        elif y > 0.0:
            Wp += w
            Lp += w * max(math.log(y), log_floor[i])
        else:
            continue
        Q += w * y * y
    return Wn, Wp, Ln, Lp, Q


def _side_stats_np(x, r, a, log_floor):
    y = x - a
    neg = (y < 0.0) & (r != 0.0)
    pos = (y > 0.0) & (r != 0.0)
    rn = r[neg]
    rp = r[pos]
    fn = log_floor[neg]
    fp = log_floor[pos]
    yn = y[neg]
    yp = y[pos]
    Wn = float(rn.sum())
    Wp = float(rp.sum())
    Ln = float(np.dot(rn, np.maximum(np.log(-yn), fn)))
    Lp = float(np.dot(rp, np.maximum(np.log(yp), fp)))
    Q = float(np.dot(rn, yn * yn) + np.dot(rp, yp * yp))
    return Wn, Wp, Ln, Lp, Q


_GOLD = 0.5 * (3.0 - math.sqrt(5.0))
# each observation puts a kink in the center profile, so the search window is
# scanned on a coarse grid before the best cell is refined
_CENTER_GRID = 64
_ALPHA_TOL = 1e-7
_ALPHA_ROUNDS = 4


# The exponents enter the profiled objective only through the five side
# statistics, so for a fixed center they are fitted at O(1) cost per evaluation.
# Each exponent gets a golden-section search (endpoints included), alternating
# between the two sides because sigma couples them.


def _golden_alpha(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, side, lo, hi, sigma_lo, sigma_hi):
    a = lo
    b = hi
    x1 = b - (1.0 - _GOLD) * (b - a)
    x2 = a + (1.0 - _GOLD) * (b - a)
    if side == 0:
        f1 = _profile_value(Wn, Wp, Ln, Lp, Q, x1, alpha_pos, sigma_lo, sigma_hi)
        f2 = _profile_value(Wn, Wp, Ln, Lp, Q, x2, alpha_pos, sigma_lo, sigma_hi)
    else:
        f1 = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, x1, sigma_lo, sigma_hi)
        f2 = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, x2, sigma_lo, sigma_hi)
    while b - a > _ALPHA_TOL:
        if f1 >= f2:
            b = x2
            x2 = x1
            f2 = f1
            x1 = b - (1.0 - _GOLD) * (b - a)
            if side == 0:
                f1 = _profile_value(Wn, Wp, Ln, Lp, Q, x1, alpha_pos, sigma_lo, sigma_hi)
            else:
                f1 = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, x1, sigma_lo, sigma_hi)
        else:
            a = x1
            x1 = x2
            f1 = f2
            x2 = a + (1.0 - _GOLD) * (b - a)
            if side == 0:
                f2 = _profile_value(Wn, Wp, Ln, Lp, Q, x2, alpha_pos, sigma_lo, sigma_hi)
            else:
                f2 = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, x2, sigma_lo, sigma_hi)
    best, fbest = (x1, f1) if f1 >= f2 else (x2, f2)
    for t in (lo, hi):
        if side == 0:
            ft = _profile_value(Wn, Wp, Ln, Lp, Q, t, alpha_pos, sigma_lo, sigma_hi)
        else:
            ft = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, t, sigma_lo, sigma_hi)
        if ft > fbest:
            best = t
            fbest = ft
    return best, fbest


def _fit_alphas(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi):
    cur = _profile_value(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    for _ in range(_ALPHA_ROUNDS):
        start = cur
        if Wn > 0.0:
            t, v = _golden_alpha(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, 0, alpha_lo, alpha_hi, sigma_lo, sigma_hi)
            if v > cur:
                alpha_neg = t
                cur = v
        if Wp > 0.0:
            t, v = _golden_alpha(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, 1, alpha_lo, alpha_hi, sigma_lo, sigma_hi)
            if v > cur:
                alpha_pos = t
                cur = v
        if cur - start <= 1e-12 * max(1.0, abs(cur)):
            break
    return alpha_neg, alpha_pos, cur


@njit
def _golden_alpha_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, side, lo, hi, sigma_lo, sigma_hi):
    a = lo
    b = hi
    x1 = b - (1.0 - _GOLD) * (b - a)
    x2 = a + (1.0 - _GOLD) * (b - a)
    if side == 0:
        f1 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, x1, alpha_pos, sigma_lo, sigma_hi)
        f2 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, x2, alpha_pos, sigma_lo, sigma_hi)
    else:
        f1 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, x1, sigma_lo, sigma_hi)
        f2 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, x2, sigma_lo, sigma_hi)
    while b - a > _ALPHA_TOL:
        if f1 >= f2:
            b = x2
            x2 = x1
            f2 = f1
            x1 = b - (1.0 - _GOLD) * (b - a)
            if side == 0:
                f1 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, x1, alpha_pos, sigma_lo, sigma_hi)
            else:
                f1 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, x1, sigma_lo, sigma_hi)
        else:
            a = x1
            x1 = x2
            f1 = f2
            x2 = a + (1.0 - _GOLD) * (b - a)
            if side == 0:
                f2 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, x2, alpha_pos, sigma_lo, sigma_hi)
            else:
                f2 = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, x2, sigma_lo, sigma_hi)
    if f1 >= f2:
        best = x1
        fbest = f1
    else:
        best = x2
        fbest = f2
    for t in (lo, hi):
        if side == 0:
            ft = _profile_value_nb(Wn, Wp, Ln, Lp, Q, t, alpha_pos, sigma_lo, sigma_hi)
        else:
            ft = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, t, sigma_lo, sigma_hi)
        if ft > fbest:
            best = t
            fbest = ft
    return best, fbest


@njit
def _fit_alphas_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi):
    cur = _profile_value_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    for _ in range(_ALPHA_ROUNDS):
        start = cur
        if Wn > 0.0:
            t, v = _golden_alpha_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, 0, alpha_lo, alpha_hi,
                                    sigma_lo, sigma_hi)
            if v > cur:
                alpha_neg = t
                cur = v
        if Wp > 0.0:
            t, v = _golden_alpha_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, 1, alpha_lo, alpha_hi,
                                    sigma_lo, sigma_hi)
            if v > cur:
                alpha_pos = t
                cur = v
        if cur - start <= 1e-12 * max(1.0, abs(cur)):
            break
    return alpha_neg, alpha_pos, cur


@njit
def _center_objective_nb(t, x, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi, log_floor):
    # profile over the exponents, the mass split and sigma at center t
    Wn, Wp, Ln, Lp, Q = _side_stats_nb(x, r, t, log_floor)
    return _fit_alphas_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi)[2]


@njit
def _brent_center_nb(x_data, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi,
                     log_floor, lo, hi, xtol, maxiter):
    # Brent's bounded minimizer (golden section with parabolic steps) on -objective
    a = lo
    b = hi
    x = w = v = a + _GOLD * (b - a)
    fx = fw = fv = -_center_objective_nb(x, x_data, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi,
                                         sigma_lo, sigma_hi, log_floor)
    d = 0.0
    e = 0.0
    for _ in range(maxiter):
        m = 0.5 * (a + b)
        tol1 = 1.5e-8 * abs(x) + xtol / 3.0
        tol2 = 2.0 * tol1
        if abs(x - m) <= tol2 - 0.5 * (b - a):
            break
        golden = True
        if abs(e) > tol1:
            rr = (x - w) * (fx - fv)
            q = (x - v) * (fx - fw)
            p = (x - v) * q - (x - w) * rr
            q = 2.0 * (q - rr)
            if q > 0.0:
                p = -p
            q = abs(q)
            etemp = e
            e = d
            if abs(p) < abs(0.5 * q * etemp) and p > q * (a - x) and p < q * (b - x):
                d = p / q
                u = x + d
                if (u - a) < tol2 or (b - u) < tol2:
                    d = tol1 if x < m else -tol1
                golden = False
        if golden:
            e = (b - x) if x < m else (a - x)
            d = _GOLD * e
        if abs(d) >= tol1:
            u = x + d
        else:
            u = x + (tol1 if d > 0.0 else -tol1)
        fu = -_center_objective_nb(u, x_data, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi,
                                   sigma_lo, sigma_hi, log_floor)
        if fu <= fx:
            if u < x:
                b = x
            else:
                a = x
            v = w
            fv = fw
            w = x
            fw = fx
            x = u
            fx = fu
        else:
            if u < x:
                a = u
            else:
                b = u
            if fu <= fw or w == x:
                v = w
                fv = fw
                w = u
                fw = fu
            elif fu <= fv or v == x or v == w:
                v = u
                fv = fu
    # the profile can be monotone on the window, so the endpoints compete too
    for t in (lo, hi):
        ft = -_center_objective_nb(t, x_data, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi,
                                   sigma_lo, sigma_hi, log_floor)
        if ft < fx:
            x = t
            fx = ft
    return x, -fx


@njit
def _marginal_update_nb(x, r, a, alpha_neg, alpha_pos, sigma, sigma_lo, sigma_hi,
                        alpha_lo, alpha_hi, x_lo, x_hi, log_floor, sweeps):
    for _ in range(sweeps):
        lo = max(a - 2.0 * sigma, x_lo)
        hi = min(a + 2.0 * sigma, x_hi)
        if hi > lo:
            cur = _center_objective_nb(a, x, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi,
                                       log_floor)
            h = (hi - lo) / _CENTER_GRID
            t0 = a
            v0 = cur
            for g in range(_CENTER_GRID):
                t = lo + (g + 0.5) * h
                v = _center_objective_nb(t, x, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi,
                                         log_floor)
                if v > v0:
                    t0 = t
                    v0 = v
            cand, val = _brent_center_nb(x, r, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi,
                                         log_floor, max(t0 - h, lo), min(t0 + h, hi), 1e-7 * sigma, 60)
            if val < v0:
                cand = t0
                val = v0
            if val > cur:
                a = cand
        Wn, Wp, Ln, Lp, Q = _side_stats_nb(x, r, a, log_floor)
        alpha_neg, alpha_pos, _ = _fit_alphas_nb(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, alpha_lo, alpha_hi,
                                                 sigma_lo, sigma_hi)
        sigma = _profile_sigma_nb(Wn, Wp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    Wn, Wp, Ln, Lp, Q = _side_stats_nb(x, r, a, log_floor)
    W = Wn + Wp
    p = Wn / W if W > 0.0 else 0.5
    return a, alpha_neg, alpha_pos, sigma, p


def _bounded_max(f, lo, hi, xtol):
    t = fminbound(lambda u: -f(u), lo, hi, xtol=xtol, maxfun=60)
    best, fbest = float(t), f(float(t))
    for u in (lo, hi):
        fu = f(u)
        if fu > fbest:
            best, fbest = u, fu
    return best, fbest


def _marginal_update_np(x, r, a, alpha_neg, alpha_pos, sigma, sigma_lo, sigma_hi,
                        alpha_lo, alpha_hi, x_lo, x_hi, log_floor, sweeps):
    """Coordinate ascent on one marginal's responsibility-weighted log-likelihood.

    The center is searched with the exponents, mass split and sigma profiled
    out, first on a coarse grid over ``a +- 2 sigma`` and then by Brent's
    method inside the best grid cell; then the exponents and sigma are
    refitted at the new center.
    Inside the objective ``log|x_i - a|`` is floored at ``log_floor[i]``: with
    a negative exponent the exact likelihood grows without bound as the center
    approaches an observation, and the floor caps what one point can contribute.
    Returns ``(a, alpha_neg, alpha_pos, sigma, negative_mass)``.
    """

    def center_objective(t):
        stats = _side_stats_np(x, r, t, log_floor)
        return _fit_alphas(*stats, alpha_neg, alpha_pos, alpha_lo, alpha_hi, sigma_lo, sigma_hi)[2]

    for _ in range(sweeps):
        lo = max(a - 2.0 * sigma, x_lo)
        hi = min(a + 2.0 * sigma, x_hi)
        if hi > lo:
            cur = center_objective(a)
            h = (hi - lo) / _CENTER_GRID
            grid = lo + (np.arange(_CENTER_GRID) + 0.5) * h
            vals = [center_objective(t) for t in grid]
            g = int(np.argmax(vals))
            t0, v0 = (grid[g], vals[g]) if vals[g] > cur else (a, cur)
            cand, val = _bounded_max(center_objective, max(t0 - h, lo), min(t0 + h, hi), 1e-7 * sigma)
            if val < v0:
                cand, val = t0, v0
            if val > cur:
                a = cand
        Wn, Wp, Ln, Lp, Q = _side_stats_np(x, r, a, log_floor)
        alpha_neg, alpha_pos, _ = _fit_alphas(Wn, Wp, Ln, Lp, Q, alpha_neg, alpha_pos, alpha_lo, alpha_hi,
                                              sigma_lo, sigma_hi)
        sigma = _profile_sigma(Wn, Wp, Q, alpha_neg, alpha_pos, sigma_lo, sigma_hi)
    Wn, Wp, Ln, Lp, Q = _side_stats_np(x, r, a, log_floor)
    W = Wn + Wp
    p = Wn / W if W > 0.0 else 0.5
    return a, alpha_neg, alpha_pos, sigma, p


# ---------------------------------------------------------------------------
# dense simplex pivot
# ---------------------------------------------------------------------------


@njit
def _pivot_nb(T, row, col):
    m, n = T.shape
    piv = T[row, col]
    for j in range(n):
        T[row, j] /= piv
    for i in range(m):
        if i == row:
            continue
        f = T[i, col]
        if f != 0.0:
            for j in range(n):
                T[i, j] -= f * T[row, j]
            T[i, col] = 0.0
    T[row, col] = 1.0


def _pivot_np(T, row, col):
    T[row] /= T[row, col]
    f = T[:, col].copy()
    f[row] = 0.0
    nz = np.nonzero(f)[0]
    if nz.size:
        T[nz] -= np.outer(f[nz], T[row])
        T[nz, col] = 0.0
    T[row, col] = 1.0


if USE_NUMBA:
    component_logpdf = _component_logpdf_nb
    marginal_update = _marginal_update_nb
    pivot = _pivot_nb
else:
    component_logpdf = _component_logpdf_np
    marginal_update = _marginal_update_np
    pivot = _pivot_np

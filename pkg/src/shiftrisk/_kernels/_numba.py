"""Numba-jitted twins of the hot kernels in `_numpy`.

Same contracts and tie-break rules; loops instead of broadcasting. All
kernels are compiled nopython with nogil so fold-level threads can overlap.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(**_JIT)
def rbf_gram(x, y, gamma):
    n, d = x.shape
    m = y.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            sq = 0.0
            for k in range(d):
                diff = x[i, k] - y[j, k]
                sq += diff * diff
            out[i, j] = np.exp(-gamma * sq)
    return out


@njit(**_JIT)
def pinball_sum(u, alpha):
    total = 0.0
    for i in range(u.shape[0]):
        v = u[i]
        if v < 0.0:
            total += v * (alpha - 1.0)
        else:
            total += v * alpha
    return total


@njit(**_JIT)
def smoothed_pinball(u, alpha, h):
    n = u.shape[0]
    grad = np.empty(n)
    total = 0.0
    for i in range(n):
        v = u[i]
        if v >= h:
            total += v * alpha
            grad[i] = alpha
        elif v <= -h:
            total += v * (alpha - 1.0)
            grad[i] = alpha - 1.0
        else:
            total += (alpha - 0.5) * v + v * v / (4.0 * h) + 0.25 * h
            grad[i] = (alpha - 0.5) + v / (2.0 * h)
    return total, grad


@njit(**_JIT)
def _pinball_1d(c, x, alpha, t, lam):
    total = lam * t * t
    for i in range(c.shape[0]):
        v = c[i] - x[i] * t
        if v < 0.0:
            total += v * (alpha - 1.0)
        else:
            total += v * alpha
    return total


@njit(**_JIT)
def pinball_coord_argmin(c, x, alpha, lam):
    m = c.shape[0]
    b = np.empty(m)
    jumps = np.empty(m)
    s0 = 0.0
    for i in range(m):
        b[i] = c[i] / x[i]
        jumps[i] = abs(x[i])
        if x[i] > 0.0:
            s0 += -alpha * x[i]
        else:
            s0 += (1.0 - alpha) * x[i]

    order = np.argsort(b)
    bs = b[order]
    js = jumps[order]

    if lam == 0.0:
        if s0 >= 0.0:
            return bs[0]
        s = s0
        for j in range(m):
            s += js[j]
            if s >= 0.0:
                return bs[j]
        return bs[m - 1]

    two_lam = 2.0 * lam
    n_cand = 0
    cand = np.empty(3)
    t0 = -s0 / two_lam
    if t0 <= bs[0]:
        cand[n_cand] = t0
        n_cand += 1
    s = s0
    found_bp = False
    found_seg = False
    for j in range(m):
        g_left = s + two_lam * bs[j]
        s += js[j]
        g_right = s + two_lam * bs[j]
        if not found_bp and g_left <= 0.0 and g_right >= 0.0:
            cand[n_cand] = bs[j]
            n_cand += 1
            found_bp = True
        if not found_seg:
            t = -s / two_lam
            hi = bs[j + 1] if j + 1 < m else np.inf
            if t > bs[j] and t < hi:
                cand[n_cand] = t
                n_cand += 1
                found_seg = True
        if found_bp and found_seg:
            break
    if n_cand == 0:
        cand[0] = bs[m - 1]
        n_cand = 1

    best_t = cand[0]
    best_f = _pinball_1d(c, x, alpha, best_t, lam)
    for k in range(1, n_cand):
        t = cand[k]
        f = _pinball_1d(c, x, alpha, t, lam)
        tol = 1e-15 * (1.0 + abs(best_f))
        if f < best_f - tol or (abs(f - best_f) <= tol and t < best_t):
            best_t = t
            best_f = f
    return best_t


@njit(**_JIT)
def bspline_design(x, knots, degree):
    n = x.shape[0]
    n_knots = knots.shape[0]
    n_basis = n_knots - degree - 1
    lo = knots[degree]
    hi = knots[n_knots - degree - 1]
    out = np.zeros((n, n_basis))
    left = np.empty(degree + 1)
    right = np.empty(degree + 1)
    vals = np.empty(degree + 1)
    for i in range(n):
        xi = x[i]
        if xi < lo:
            xi = lo
        elif xi > hi:
            xi = hi
        span = np.searchsorted(knots, xi, side="right") - 1
        if span > n_knots - degree - 2:
            span = n_knots - degree - 2
        if span < degree:
            span = degree
        vals[0] = 1.0
        for j in range(1, degree + 1):
            left[j] = xi - knots[span + 1 - j]
            right[j] = knots[span + j] - xi
            saved = 0.0
            for r in range(j):
                temp = vals[r] / (right[r + 1] + left[j - r])
                vals[r] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            vals[j] = saved
        for j in range(degree + 1):
            out[i, span - degree + j] = vals[j]
    return out

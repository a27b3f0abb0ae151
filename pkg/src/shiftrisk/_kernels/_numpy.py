"""Pure-NumPy implementations of the hot numeric kernels.

These are the reference implementations; `shiftrisk._kernels._numba` holds
jitted twins with identical semantics. Selection happens in the package
`__init__` via the SHIFTRISK_NO_NUMBA environment flag.
"""

from __future__ import annotations

import numpy as np


def rbf_gram(x, y, gamma):
    """Gram matrix K[i, j] = exp(-gamma * ||x_i - y_j||^2)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    sq = (x * x).sum(axis=1)[:, None] + (y * y).sum(axis=1)[None, :]
    sq -= 2.0 * (x @ y.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def pinball_sum(u, alpha):
    """Exact check loss sum(rho_alpha(u)) with rho_alpha(u) = u*(alpha - [u<0])."""
    return float(np.sum(u * (alpha - (u < 0.0))))


def smoothed_pinball(u, alpha, h):
    """Uniform-kernel smoothed check loss and its derivative in u.

    Outside the band |u| >= h the loss equals the exact check function; inside
    it is the matching quadratic (alpha - 1/2)*u + u^2/(4h) + h/4. Returns
    (sum of losses, elementwise derivative).
    """
    inside = np.abs(u) < h
    loss = u * (alpha - (u < 0.0))
    grad = np.where(u >= 0.0, alpha, alpha - 1.0)
    loss_in = (alpha - 0.5) * u + u * u / (4.0 * h) + 0.25 * h
    grad_in = (alpha - 0.5) + u / (2.0 * h)
    loss = np.where(inside, loss_in, loss)
    grad = np.where(inside, grad_in, grad)
    return float(loss.sum()), grad


def pinball_coord_argmin(c, x, alpha, lam):
    """Exact minimizer of t -> sum_i rho_alpha(c_i - x_i*t) + lam*t^2.

    Entries with x_i == 0 must be filtered out by the caller. The objective is
    convex piecewise linear (plus an optional quadratic); flat minimizing
    intervals resolve to their smallest breakpoint, and a flat region unbounded
    below resolves to its finite right endpoint.
    """
    b = c / x
    ax = np.abs(x)
    slope_low = np.where(x > 0.0, -alpha * x, (1.0 - alpha) * x)
    s0 = float(slope_low.sum())

    order = np.argsort(b)
    b = b[order]
    jumps = ax[order]
    s_after = s0 + np.cumsum(jumps)

    if lam == 0.0:
        if s0 >= 0.0:
            return float(b[0])
        j = int(np.searchsorted(s_after, 0.0, side="left"))
        return float(b[min(j, len(b) - 1)])

    two_lam = 2.0 * lam
    candidates = []
    t0 = -s0 / two_lam
    if t0 <= b[0]:
        candidates.append(t0)
    s_before = np.concatenate(([s0], s_after[:-1]))
    g_left = s_before + two_lam * b
    g_right = s_after + two_lam * b
    hit = (g_left <= 0.0) & (g_right >= 0.0)
    if hit.any():
        candidates.append(float(b[int(np.argmax(hit))]))
    t_seg = -s_after / two_lam
    hi = np.concatenate((b[1:], [np.inf]))
    seg = (t_seg > b) & (t_seg < hi)
    if seg.any():
        candidates.append(float(t_seg[int(np.argmax(seg))]))
    if not candidates:
        candidates.append(float(b[-1]))

    best_t = candidates[0]
    best_f = pinball_sum(c - x * best_t, alpha) + lam * best_t * best_t
    for t in candidates[1:]:
        f = pinball_sum(c - x * t, alpha) + lam * t * t
        if f < best_f - 1e-15 * (1.0 + abs(best_f)) or (
            abs(f - best_f) <= 1e-15 * (1.0 + abs(best_f)) and t < best_t
        ):
            best_t, best_f = t, f
    return float(best_t)


def bspline_design(x, knots, degree):
    """Design matrix of all B-spline basis functions on a clamped knot vector.

    Points are clamped into [knots[degree], knots[-degree-1]] before
    evaluation, and the right boundary is treated as part of the last
    non-empty span so the basis sums to one on the whole closed interval.
    """
    t = np.asarray(knots, dtype=np.float64)
    n_basis = len(t) - degree - 1
    lo, hi = t[degree], t[-degree - 1]
    x = np.clip(np.asarray(x, dtype=np.float64), lo, hi)

    b = ((t[None, :-1] <= x[:, None]) & (x[:, None] < t[None, 1:])).astype(np.float64)
    j_last = len(t) - degree - 2
    at_max = x == hi
    if at_max.any():
        b[at_max, :] = 0.0
        b[at_max, j_last] = 1.0

    for k in range(1, degree + 1):
        nb = len(t) - k - 1
        left_den = t[k : k + nb] - t[:nb]
        right_den = t[k + 1 : k + 1 + nb] - t[1 : 1 + nb]
        left = np.zeros((len(x), nb))
        mask = left_den > 0.0
        if mask.any():
            left[:, mask] = (x[:, None] - t[None, :nb][:, mask]) / left_den[mask] * b[:, :nb][:, mask]
        right = np.zeros((len(x), nb))
        mask = right_den > 0.0
        if mask.any():
            right[:, mask] = (
                (t[None, k + 1 : k + 1 + nb][:, mask] - x[:, None]) / right_den[mask] * b[:, 1 : 1 + nb][:, mask]
            )
        b = left + right
    return b[:, :n_basis]

"""Independent numeric oracles shared by the test suite.

These deliberately avoid the analytic code paths they check: implicit
surfaces are root-found by bisection along the ray, integrals by
quadrature, distributions by counting.
"""

from __future__ import annotations

import numpy as np


def bisect_ray_implicit(origin, direction, implicit, t_lo=1e-6, t_hi=100.0,
                        coarse=4000, iters=80):
    """First root of implicit(origin + t*dir) on (t_lo, t_hi) by marching
    + bisection.  Returns None when no sign change is found."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    ts = np.linspace(t_lo, t_hi, coarse)
    vals = np.array([implicit(o + t * d) for t in ts])
    sign_change = np.nonzero(np.diff(np.signbit(vals)))[0]
    if len(sign_change) == 0:
        return None
    i = sign_change[0]
    lo, hi = ts[i], ts[i + 1]
    flo = vals[i]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fmid = implicit(o + mid * d)
        if (fmid < 0.0) == (flo < 0.0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def spheroid_implicit(q, r):
    def f(p):
        return p[0] * p[0] + p[1] * p[1] + (1.0 + q) * p[2] * p[2] - 2.0 * r * p[2]
    return f


def sphere_implicit(center, radius):
    c = np.asarray(center, dtype=float)

    def f(p):
        d = p - c
        return float(d @ d) - radius * radius
    return f


def bisect_ray_implicit_batch(origins, directions, implicit_batch, t_lo=1e-6,
                              t_hi=100.0, coarse=2048, iters=64):
    """Vectorized march+bisection over many rays at once.

    `implicit_batch(points)` takes an (N, 3) array.  Returns t per ray with
    NaN where no sign change was found on the grid.
    """
    o = np.asarray(origins, dtype=float)
    d = np.asarray(directions, dtype=float)
    n = len(o)
    ts = np.linspace(t_lo, t_hi, coarse)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    found = np.zeros(n, dtype=bool)
    prev_v = implicit_batch(o + ts[0] * d)
    prev_t = np.full(n, ts[0])
    for t in ts[1:]:
        v = implicit_batch(o + t * d)
        cross = (~found) & (np.signbit(v) != np.signbit(prev_v))
        lo = np.where(cross, prev_t, lo)
        hi = np.where(cross, t, hi)
        found |= cross
        prev_v = v
        prev_t = np.full(n, t)
    flo = implicit_batch(o + lo[:, None] * d)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fmid = implicit_batch(o + mid[:, None] * d)
        same = np.signbit(fmid) == np.signbit(flo)
        lo = np.where(same, mid, lo)
        flo = np.where(same, fmid, flo)
        hi = np.where(same, hi, mid)
    return np.where(found, 0.5 * (lo + hi), np.nan)


def bisect_scalar(func, lo, hi, iters=100):
    """Root of a scalar function on [lo, hi] (must bracket) by bisection."""
    flo = func(lo)
    assert flo * func(hi) <= 0.0, "bisection interval does not bracket a root"
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if (func(mid) < 0.0) == (flo < 0.0):
            lo = mid
            flo = func(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)

"""Compiled inner loops for the particle push (arrays in radius-sorted order)."""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True, error_model="numpy")
def _count_below(radii, g, x):
    # number of table radii strictly below x, galloping outward from row g
    n = radii.shape[0]
    if x > radii[g]:
        lo = g + 1
        step = 1
        hi = lo
        while hi < n:
            if radii[hi] >= x:
                break
            lo = hi + 1
            hi += step
            step *= 2
        if hi > n:
            hi = n
    else:
        hi = g
        step = 1
        lo = hi
        while lo > 0:
            if radii[lo - 1] < x:
                break
            hi = lo - 1
            lo -= step
            step *= 2
        if lo < 0:
            lo = 0
    # answer lies in [lo, hi]
    while lo < hi:
        mid = (lo + hi) // 2
        if radii[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True, error_model="numpy")
def _mass_at(radii, cum_ext, half_at, k, x):
    # enclosed mass at x given k = number of table radii strictly below x
    kk = k if k < radii.shape[0] else radii.shape[0] - 1
    return cum_ext[k] + half_at[kk] * (radii[kk] == x)


@njit(cache=True, nogil=True, error_model="numpy")
def _clip_row(k, n):
    if k < 0:
        return 0
    if k > n - 1:
        return n - 1
    return k


@njit(cache=True, nogil=True, error_model="numpy")
def _deriv(x, y, ell, m, relativistic):
    inv_r2 = 1.0 / (x * x)
    if relativistic:
        gamma = math.sqrt(1.0 + y * y + ell * inv_r2)
        return y / gamma, (ell / (x * gamma) + m) * inv_r2
    return y, (ell / x + m) * inv_r2


@njit(cache=True, nogil=True, error_model="numpy")
def rk4_sorted(r, w, ell, mu, group, radii, cum_ext, half_at, dt, relativistic,
               self_consistent, r_floor, lo, hi, r_out, w_out, stages):
    """RK4 with a frozen field table; returns the number of clamped evaluations.

    Each particle feels half of its own weight wherever a stage places it.
    Table searches start from a rank extrapolated from the previous stage.
    The radii of the four stages are written to ``stages`` (shape (n, 4)).
    """
    clamps = 0
    n = radii.shape[0]
    for j in range(lo, hi):
        x0 = r[j]
        y0 = w[j]
        l = ell[j]
        hs = 0.5 * mu[j]
        g = group[j]
        a = g - 8 if g >= 8 else 0
        b = g + 8 if g + 8 < n else n - 1
        span = radii[b] - radii[a]
        density = (b - a) / span if span > 0.0 else 0.0
        sr = 0.0
        sw = 0.0
        ar = 0.0
        aw = 0.0
        k1 = g
        for s in range(4):
            if s == 0:
                x = x0
                y = y0
            elif s == 3:
                x = x0 + dt * ar
                y = y0 + dt * aw
            else:
                x = x0 + 0.5 * dt * ar
                y = y0 + 0.5 * dt * aw
            m = 0.0
            if self_consistent:
                if s == 0:
                    k = g
                elif s == 1:
                    k = _count_below(radii, _clip_row(g + int((x - x0) * density), n), x)
                    k1 = k
                elif s == 2:
                    k = _count_below(radii, _clip_row(k1, n), x)
                    k1 = k
                else:
                    k = _count_below(radii, _clip_row(2 * k1 - g, n), x)
                m = _mass_at(radii, cum_ext, half_at, k, x)
                if x > x0:
                    m -= hs
                elif x < x0:
                    m += hs
            stages[j, s] = x
            if x < r_floor:
                clamps += 1
                x = r_floor
            ar, aw = _deriv(x, y, l, m, relativistic)
            c = 1.0 if (s == 0 or s == 3) else 2.0
            sr += c * ar
            sw += c * aw
        r_out[j] = x0 + dt / 6.0 * sr
        w_out[j] = y0 + dt / 6.0 * sw
    return clamps


@njit(cache=True, nogil=True, error_model="numpy")
def _outside_fraction(d0, d1):
    # fraction of the step with d > 0 when d moves linearly from d0 to d1
    if d0 > 0.0 and d1 > 0.0:
        return 1.0
    if d0 <= 0.0 and d1 <= 0.0:
        return 0.5 if (d0 == 0.0 and d1 == 0.0) else 0.0
    theta = d0 / (d0 - d1)
    return theta if d0 > 0.0 else 1.0 - theta


@njit(cache=True, nogil=True, error_model="numpy")
def _stage_fraction(stages, seen, weights, j, p):
    # weighted share of force evaluations in which j counted p as enclosed
    total = 0.0
    for s in range(weights.shape[0]):
        x = stages[j, s]
        y = seen[p, s]
        total += weights[s] * (1.0 if x > y else (0.5 if x == y else 0.0))
    return total


@njit(cache=True, nogil=True, error_model="numpy")
def crossing_impulses(r0, r1, stages, seen, weights, mu, dt):
    """Momentum corrections for shells that pass each other within one step.

    At force evaluation s particle j sits at ``stages[j, s]`` and counts p as
    enclosed when ``seen[p, s]`` lies below it; ``weights`` are the shares
    of the step carried by each evaluation. The true pair force switches at
    the crossing time, estimated by linear interpolation of both radii from
    ``r0`` to ``r1``. For every pair whose radial ranges overlap during the
    step the impulse difference dt mu_p (f_true - f_evaluated) / r^2 is
    returned, which removes the first-order error each crossing carries.
    """
    n = r0.shape[0]
    lo = np.empty(n)
    hi = np.empty(n)
    rc2 = np.empty(n)
    for j in range(n):
        a = min(r0[j], r1[j])
        b = max(r0[j], r1[j])
        for s in range(stages.shape[1]):
            a = min(a, stages[j, s], seen[j, s])
            b = max(b, stages[j, s], seen[j, s])
        lo[j] = a
        hi[j] = b
        rm = 0.5 * (r0[j] + r1[j])
        rc2[j] = rm * rm
    idx = np.argsort(lo, kind="mergesort")
    dw = np.zeros(n)
    for a in range(n):
        i = idx[a]
        for b in range(a + 1, n):
            p = idx[b]
            if lo[p] > hi[i]:
                break
            f_ip = _outside_fraction(r0[i] - r0[p], r1[i] - r1[p])
            g_ip = _stage_fraction(stages, seen, weights, i, p)
            g_pi = _stage_fraction(stages, seen, weights, p, i)
            if f_ip != g_ip:
                dw[i] += dt * mu[p] * (f_ip - g_ip) / rc2[i]
            if 1.0 - f_ip != g_pi:
                dw[p] += dt * mu[i] * ((1.0 - f_ip) - g_pi) / rc2[p]
    return dw

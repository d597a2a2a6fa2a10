"""Radial field of a shell ensemble: enclosed mass, |E| = m / r^2, norms."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FieldTable:
    """Distinct shell radii with the mass strictly below and exactly at each."""

    radii: np.ndarray
    mass_below: np.ndarray
    mass_at: np.ndarray
    total_mass: float

    @property
    def cumulative(self):
        # mass at radius <= radii[i]; constant value of m on [radii[i], radii[i+1])
        return self.mass_below + self.mass_at

    def __len__(self):
        return self.radii.shape[0]


def _table_from_sorted(rs, ms, starts=None):
    if starts is None:
        starts = np.flatnonzero(np.concatenate(([True], rs[1:] != rs[:-1])))
    radii = rs[starts]
    mass_at = np.add.reduceat(ms, starts) if ms.size else ms
    inclusive = np.cumsum(mass_at)
    below = np.concatenate(([0.0], inclusive[:-1]))
    total = float(inclusive[-1]) if inclusive.size else 0.0
    return FieldTable(radii, below, mass_at, total)


def build_field_table(e):
    """Stable sort by radius, aggregate ties, exclusive cumulative sums."""
    if len(e) == 0:
        raise ValueError("cannot build a field table from an empty ensemble")
    order = np.argsort(e.r, kind="stable")
    return _table_from_sorted(e.r[order], e.weight[order])


def sorted_field(e, hint=None):
    """Field table plus the stable sort order and each sorted particle's table row.

    ``hint`` is a previous sort order; re-sorting from it is cheap when the
    ranking has changed little. Ties keep particle-index order either way.
    """
    if hint is None:
        order = np.argsort(e.r, kind="stable")
    else:
        # with ties present, fall back so equal radii stay in index order
        pre = hint[np.argsort(e.r[hint], kind="stable")]
        rs = e.r[pre]
        if np.any(rs[1:] == rs[:-1]):
            order = np.argsort(e.r, kind="stable")
        else:
            order = pre
    rs = e.r[order]
    is_start = np.concatenate(([True], rs[1:] != rs[:-1]))
    group = np.cumsum(is_start) - 1
    table = _table_from_sorted(rs, e.weight[order], np.flatnonzero(is_start))
    return order, table, group


def table_from_arrays(r, weight):
    r = np.asarray(r, dtype=float)
    weight = np.asarray(weight, dtype=float)
    order = np.argsort(r, kind="stable")
    return _table_from_sorted(r[order], weight[order])


def enclosed_mass(table, r):
    """m(r) with half of any shell sitting exactly at ``r`` counted.

    Accepts scalars or arrays. ``m(0) = 0`` and ``m(r) = M`` beyond the
    outermost shell.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("radius must be nonnegative")
    radii = table.radii
    n = radii.shape[0]
    k = np.searchsorted(radii, r_arr, side="left")
    strictly_below = np.concatenate(([0.0], table.cumulative))[k]
    kc = np.minimum(k, n - 1)
    tie = (k < n) & (radii[kc] == r_arr)
    m = strictly_below + np.where(tie, 0.5 * table.mass_at[kc], 0.0)
    m = np.where(r_arr > 0, m, 0.0)
    return float(m) if np.ndim(m) == 0 else m


def field_magnitude(table, r):
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr <= 0):
        raise ValueError("field magnitude is undefined at r = 0")
    out = enclosed_mass(table, r_arr) / (r_arr * r_arr)
    return float(out) if np.ndim(out) == 0 else out


def _check_field_exponent(p):
    p = float(p)
    if not (p > 1.5):
        raise ValueError(f"p must exceed 3/2 (got {p}); the L^p norm of E diverges otherwise")
    return p


def field_lp_norm(table, p):
    """Exact ||E||_p for the piecewise-constant enclosed mass.

    On each segment [r_i, r_{i+1}) the mass equals the right limit
    ``cumulative[i]``; the last segment runs to infinity and the region inside
    the innermost shell carries no field.
    """
    p = _check_field_exponent(p)
    m = table.cumulative
    lo = table.radii
    if math.isinf(p):
        return float(np.max(m / (lo * lo)))
    a = 3.0 - 2.0 * p
    hi_pow = np.append(table.radii[1:] ** a, 0.0)
    seg = m ** p * (lo ** a - hi_pow) / (2.0 * p - 3.0)
    return float((4.0 * np.pi * np.sum(seg)) ** (1.0 / p))


def potential_energy(table):
    """(1/2) int m^2 / r^2 dr, i.e. (1/8 pi) ||E||_2^2, evaluated exactly."""
    m = table.cumulative
    inv_lo = 1.0 / table.radii
    inv_hi = np.append(1.0 / table.radii[1:], 0.0)
    return float(0.5 * np.sum(m * m * (inv_lo - inv_hi)))


@dataclass(frozen=True)
class DensityProfile:
    edges: np.ndarray
    mass: np.ndarray
    volume: np.ndarray

    @property
    def rho(self):
        return self.mass / self.volume

    @property
    def centers(self):
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def default_bin_edges(r, n=None):
    """Bins spanning [min r, max r] with ``ceil(N^(1/3))`` equal widths."""
    r = np.asarray(r, dtype=float)
    if n is None:
        n = max(1, math.ceil(round(r.size ** (1.0 / 3.0), 9)))
    lo, hi = float(np.min(r)), float(np.max(r))
    if hi <= lo:
        pad = 1e-3 * max(abs(lo), 1.0)
        lo, hi = max(0.0, lo - pad), hi + pad
    return np.linspace(lo, hi, int(n) + 1)


def density_profile(e, bins=None):
    """Shell-binned density: bin mass over 4 pi (r_hi^3 - r_lo^3) / 3.

    ``bins`` is None (automatic), a bin count over the radial support, or an
    explicit increasing array of edges that must cover every particle.
    """
    if bins is None or np.ndim(bins) == 0:
        edges = default_bin_edges(e.r, None if bins is None else int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bin edges must be a strictly increasing 1-d array")
    if edges[0] < 0:
        raise ValueError("bin edges must be nonnegative")
    if np.min(e.r) < edges[0] or np.max(e.r) > edges[-1]:
        raise ValueError("particle radius outside the density bin range")
    idx = np.searchsorted(edges, e.r, side="right") - 1
    idx = np.minimum(idx, edges.size - 2)
    mass = np.bincount(idx, weights=e.weight, minlength=edges.size - 1)
    volume = 4.0 * np.pi * (edges[1:] ** 3 - edges[:-1] ** 3) / 3.0
    return DensityProfile(edges, mass, volume)


def density_lq_norm(d, q, inner_cutoff=0.0):
    """Discrete ||rho||_q; bins below ``inner_cutoff`` are skipped for q > 1."""
    q = float(q)
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if q == 1.0:
        return float(np.sum(d.mass))
    keep = d.edges[:-1] >= inner_cutoff
    rho = d.rho[keep]
    if rho.size == 0:
        return 0.0
    if math.isinf(q):
        return float(np.max(rho))
    return float(np.sum(rho ** q * d.volume[keep]) ** (1.0 / q))


class FieldHistory:
    """Recorded m(t, r) stored as radii at fixed enclosed-mass fractions.

    Between records the enclosed mass is interpolated linearly in time; in
    radius it is piecewise linear through the stored quantile radii.
    """

    def __init__(self, total_mass, n_quantiles=1024):
        self.total_mass = float(total_mass)
        self.levels = np.linspace(0.0, self.total_mass, int(n_quantiles) + 1)
        self._times = []
        self._radii = []
        self._frozen = None

    @classmethod
    def from_arrays(cls, times, radii, total_mass):
        h = cls(total_mass, radii.shape[1] - 1)
        h._frozen = (np.asarray(times, dtype=float), np.asarray(radii, dtype=float))
        return h

    def record(self, time, table):
        if self._frozen is not None:
            raise RuntimeError("history is read-only")
        mid = table.mass_below + 0.5 * table.mass_at
        self._times.append(float(time))
        self._radii.append(np.interp(self.levels, mid, table.radii))

    @property
    def times(self):
        if self._frozen is not None:
            return self._frozen[0]
        return np.asarray(self._times)

    @property
    def radii(self):
        if self._frozen is not None:
            return self._frozen[1]
        return np.asarray(self._radii).reshape(-1, self.levels.size)

    def freeze(self):
        if self._frozen is None:
            self._frozen = (self.times, self.radii)
        return self

    @property
    def t_end(self):
        return float(self.times[-1])

    def _at_record(self, k, r):
        return np.interp(r, self.radii[k], self.levels, left=0.0, right=self.total_mass)

    def mass(self, t, r):
        """Enclosed mass at time ``t`` for an array of radii."""
        times = self.times
        if t <= times[0]:
            return self._at_record(0, r)
        if t >= times[-1]:
            return self._at_record(times.size - 1, r)
        k = int(np.searchsorted(times, t, side="right")) - 1
        t0, t1 = times[k], times[k + 1]
        a = (t - t0) / (t1 - t0)
        m0 = self._at_record(k, r)
        if a == 0.0:
            return m0
        return (1.0 - a) * m0 + a * self._at_record(k + 1, r)

    def save(self, path):
        self.freeze()
        np.savez(path, times=self.times, radii=self.radii, total_mass=self.total_mass)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            return cls.from_arrays(data["times"], data["radii"], float(data["total_mass"]))

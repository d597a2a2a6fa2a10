"""Initial profiles f0(r, w, ell) and their quadrature into particle ensembles."""

from dataclasses import dataclass

import numpy as np

from .phase import Ensemble, ModelTag

FOUR_PI_SQ = 4.0 * np.pi ** 2


def smoothstep(s):
    """Quintic smoothstep 6s^5 - 15s^4 + 10s^3 clipped to [0, 1]."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


def bump(x, lo, hi):
    # 0 outside [lo, hi], 1 at the midpoint, C^1 everywhere
    u = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    tent = 1.0 - np.abs(2.0 * u - 1.0)
    return np.where((u > 0.0) & (u < 1.0), smoothstep(tent), 0.0)


def edge_taper(x, lo, hi, fraction=0.1):
    width = fraction * (hi - lo)
    x = np.asarray(x, dtype=float)
    d = np.minimum(x - lo, hi - x)
    return np.where(d > 0.0, smoothstep(d / width), 0.0)


def _interval(name, pair):
    lo, hi = (float(v) for v in pair)
    if not hi > lo:
        raise ValueError(f"{name} interval must have positive length, got [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class SmoothBox:
    """Product of C^1 quintic bumps on a box, peak value ``amplitude``."""

    r: tuple = (1.0, 2.0)
    w: tuple = (-0.5, 0.5)
    ell: tuple = (0.5, 1.5)
    amplitude: float = 1.0
    kind = "smooth_box"

    def __post_init__(self):
        object.__setattr__(self, "r", _interval("r", self.r))
        object.__setattr__(self, "w", _interval("w", self.w))
        object.__setattr__(self, "ell", _interval("ell", self.ell))
        if self.r[0] < 0 or self.ell[0] < 0:
            raise ValueError("r and ell intervals must lie in [0, inf)")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")

    @property
    def box(self):
        return (self.r, self.w, self.ell)

    def __call__(self, r, w, ell):
        return (
            self.amplitude
            * bump(r, *self.r)
            * bump(w, *self.w)
            * bump(ell, *self.ell)
        )


@dataclass(frozen=True)
class ShellGaussian:
    """Truncated Gaussian centred at ``center`` with widths ``sigma``.

    The support is the 3-sigma box clipped to r, ell >= 0, and the value is
    tapered to zero over the outer 10% of each side so the profile stays C^1.
    """

    center: tuple = (1.5, 0.0, 1.0)
    sigma: tuple = (0.15, 0.15, 0.15)
    amplitude: float = 1.0
    kind = "shell_gaussian"

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        s = tuple(float(v) for v in self.sigma)
        if len(c) != 3 or len(s) != 3:
            raise ValueError("center and sigma need three entries (r, w, ell)")
        if min(s) <= 0:
            raise ValueError("sigma entries must be positive")
        if self.amplitude < 0:
            raise ValueError("amplitude must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "sigma", s)

    @property
    def box(self):
        (r0, w0, l0), (sr, sw, sl) = self.center, self.sigma
        r = (max(0.0, r0 - 3 * sr), r0 + 3 * sr)
        ell = (max(0.0, l0 - 3 * sl), l0 + 3 * sl)
        if r[1] <= 0 or ell[1] <= 0:
            raise ValueError("shell Gaussian support lies entirely at negative r or ell")
        return (r, (w0 - 3 * sw, w0 + 3 * sw), ell)

    def __call__(self, r, w, ell):
        value = self.amplitude
        for x, c, s, (lo, hi) in zip((r, w, ell), self.center, self.sigma, self.box):
            x = np.asarray(x, dtype=float)
            value = value * np.exp(-(((x - c) / s) ** 2)) * edge_taper(x, lo, hi)
        return value


@dataclass(frozen=True)
class PointSet:
    """Explicit particles (r, w, ell, mass) used verbatim instead of a quadrature.

    Midpoint nodes never land on ell = 0, so degenerate states such as purely
    radial infall are only reachable this way.
    """

    r: tuple = (1.0,)
    w: tuple = (0.0,)
    ell: tuple = (1.0,)
    mass: tuple = (1.0,)
    kind = "points"

    def __post_init__(self):
        cols = {k: tuple(float(v) for v in np.atleast_1d(getattr(self, k))) for k in ("r", "w", "ell", "mass")}
        n = {len(v) for v in cols.values()}
        if len(n) != 1 or 0 in n:
            raise ValueError("points need equally long, nonempty r, w, ell and mass lists")
        if min(cols["r"]) <= 0 or min(cols["ell"]) < 0 or min(cols["mass"]) < 0:
            raise ValueError("points need r > 0, ell >= 0 and mass >= 0")
        for k, v in cols.items():
            object.__setattr__(self, k, v)

    def __call__(self, r, w, ell):
        raise TypeError("a point set has no phase-space density")

    def ensemble(self, model=ModelTag.CLASSICAL):
        n = len(self.r)
        e = Ensemble(np.array(self.r), np.array(self.w), np.array(self.ell), np.array(self.mass),
                     model=ModelTag.coerce(model), time=0.0)
        e.meta["node_index"] = np.column_stack([np.arange(n), np.zeros(n, int), np.zeros(n, int)])
        e.meta["grid_shape"] = (n, 1, 1)
        return e


PROFILES = {"smooth_box": SmoothBox, "shell_gaussian": ShellGaussian, "points": PointSet}


def profile_eval(profile, point):
    """f0 at a ``RadialPoint`` (or anything with r, w, ell attributes)."""
    return float(profile(point.r, point.w, point.ell))


@dataclass(frozen=True)
class QuadratureSpec:
    n_r: int = 32
    n_w: int = 16
    n_ell: int = 32

    def __post_init__(self):
        for name in ("n_r", "n_w", "n_ell"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def size(self):
        return self.n_r * self.n_w * self.n_ell


def midpoints(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5), h


def build_ensemble(profile, quad, model=ModelTag.CLASSICAL):
    """Midpoint-rule particles with weights ``4 pi^2 f0 dr dw dell``.

    Nodes where f0 vanishes are dropped. The grid index of every kept particle
    is stored in ``meta["node_index"]``. A ``PointSet`` ignores ``quad``.
    """
    if isinstance(profile, PointSet):
        return profile.ensemble(model)
    (r_lo, r_hi), (w_lo, w_hi), (l_lo, l_hi) = profile.box
    rs, dr = midpoints(r_lo, r_hi, quad.n_r)
    ws, dw = midpoints(w_lo, w_hi, quad.n_w)
    ls, dl = midpoints(l_lo, l_hi, quad.n_ell)
    R, W, L = np.meshgrid(rs, ws, ls, indexing="ij")
    weight = FOUR_PI_SQ * profile(R, W, L) * (dr * dw * dl)
    idx = np.indices(R.shape).reshape(3, -1).T
    keep = weight.ravel() > 0.0
    if not np.any(keep):
        raise ValueError("profile produced an empty ensemble (all quadrature weights are zero)")
    e = Ensemble(
        R.ravel()[keep], W.ravel()[keep], L.ravel()[keep], weight.ravel()[keep],
        model=ModelTag.coerce(model), time=0.0,
    )
    e.meta["node_index"] = idx[keep]
    e.meta["grid_shape"] = (quad.n_r, quad.n_w, quad.n_ell)
    return e


def check_condition_A(e):
    """Return ``(satisfied, ell_min)``: all angular momenta bounded away from 0."""
    if len(e) == 0:
        raise ValueError("empty ensemble")
    ell_min = float(np.min(e.ell))
    return ell_min > 0.0, ell_min


def lattice_particles(e, per_axis=4):
    """Indices of particles on a ``per_axis``^3 lattice over the quadrature index space.

    Lattice points are evenly spaced and include both ends of every axis, so
    the corners of the support are always tracked. When a node was dropped
    the nearest kept node (in index distance) is used instead.
    """
    shape = np.asarray(e.meta["grid_shape"])
    nodes = np.asarray(e.meta["node_index"])
    picks = []
    for a in range(3):
        picks.append(np.unique(np.rint(np.linspace(0, shape[a] - 1, per_axis)).astype(int)))
    out = []
    for i in picks[0]:
        for j in picks[1]:
            for l in picks[2]:
                d = np.abs(nodes - np.array([i, j, l])).sum(axis=1)
                out.append(int(np.argmin(d)))
    return np.unique(np.array(out, dtype=int))

"""Conserved quantities, norm time series and power-law exponent fits."""

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .field import density_lq_norm, density_profile, field_lp_norm, potential_energy
from .initial import FOUR_PI_SQ
from .phase import ModelTag


def total_mass(e):
    return float(np.sum(e.weight))


def kinetic_energy(e):
    speed2 = e.w * e.w + e.ell / (e.r * e.r)
    if e.model is ModelTag.CLASSICAL:
        return float(0.5 * np.sum(e.weight * speed2))
    return float(np.sum(e.weight * np.sqrt(1.0 + speed2)))


def total_energy(e, table=None):
    """Kinetic (or relativistic particle) energy plus field energy.

    The field term is (1/2) int m^2 r^-2 dr, the value conserved by the
    characteristic flow with force m / r^2. ``table=None`` means the field is
    switched off and only the particle term is returned.
    """
    kin = kinetic_energy(e)
    if table is None:
        return kin
    return kin + potential_energy(table)


_INDICATOR = re.compile(r"^indicator\[\s*([^,\]]+)\s*,\s*([^\]]+)\s*\]$")


def casimir_function(name):
    """Resolve a named phi(ell): identity, square or indicator[a,b]."""
    if callable(name):
        return name
    key = str(name).strip()
    if key == "identity":
        return lambda ell: ell
    if key == "square":
        return lambda ell: ell * ell
    match = _INDICATOR.match(key)
    if match:
        a, b = float(match.group(1)), float(match.group(2))
        if not b > a:
            raise ValueError(f"indicator bounds must satisfy a < b: {key}")
        return lambda ell: ((ell >= a) & (ell <= b)).astype(float)
    raise ValueError(f"unknown casimir function {name!r}")


def casimir_column(name):
    key = str(name).strip()
    match = _INDICATOR.match(key)
    if match:
        return f"casimir_indicator_{float(match.group(1))!r}_{float(match.group(2))!r}"
    return f"casimir_{key}"


def casimir(e, phi):
    """sum mu_i phi(ell_i) / (4 pi^2), the discrete int phi(ell) f."""
    phi = casimir_function(phi)
    return float(np.sum(e.weight * phi(e.ell)) / FOUR_PI_SQ)


def support_functions(e):
    """(max r, max |w|, max sqrt(w^2 + ell / r^2)) over the particles."""
    if len(e) == 0:
        raise ValueError("empty ensemble")
    speed = np.sqrt(e.w * e.w + e.ell / (e.r * e.r))
    return float(np.max(e.r)), float(np.max(np.abs(e.w))), float(np.max(speed))


def exponent_label(x):
    x = float(x)
    if math.isinf(x):
        return "inf"
    return repr(x).rstrip("0").rstrip(".").replace(".", "_") if "." in repr(x) else repr(x)


@dataclass(frozen=True)
class DiagnosticsConfig:
    e_norms: tuple = (2.0, 3.0, math.inf)
    rho_norms: tuple = (1.0, 1.2, 2.0, math.inf)
    casimirs: tuple = ("identity", "square")
    density_bins: int = 0
    inner_cutoff: float = 0.0

    def __post_init__(self):
        for p in self.e_norms:
            if not float(p) > 1.5:
                raise ValueError(f"p must exceed 3/2 (got {p})")
        for q in self.rho_norms:
            if float(q) < 1:
                raise ValueError(f"q must be >= 1 (got {q})")
        for name in self.casimirs:
            casimir_function(name)

    def columns(self):
        cols = ["time", "mass", "energy"]
        cols += [casimir_column(c) for c in self.casimirs]
        cols += [f"E_p{exponent_label(p)}" for p in self.e_norms]
        cols += [f"rho_q{exponent_label(q)}" for q in self.rho_norms]
        return cols + ["R_sup", "W_sup", "speed_sup", "clamp_events"]


@dataclass
class DiagnosticRecord:
    time: float
    total_mass: float
    total_energy: float
    casimirs: dict = field(default_factory=dict)
    E_norms: dict = field(default_factory=dict)
    rho_norms: dict = field(default_factory=dict)
    R_sup: float = 0.0
    W_sup: float = 0.0
    speed_sup: float = 0.0
    clamp_events: int = 0

    def row(self):
        out = [self.time, self.total_mass, self.total_energy]
        out += list(self.casimirs.values())
        out += list(self.E_norms.values())
        out += list(self.rho_norms.values())
        return out + [self.R_sup, self.W_sup, self.speed_sup, self.clamp_events]


def measure(e, table, clamp_events=0, cfg=DiagnosticsConfig()):
    """One diagnostic sample; ``table=None`` marks a field-free run."""
    bins = cfg.density_bins or None
    dens = density_profile(e, bins)
    E = {}
    for p in cfg.e_norms:
        E[float(p)] = field_lp_norm(table, p) if table is not None else 0.0
    rho = {float(q): density_lq_norm(dens, q, cfg.inner_cutoff) for q in cfg.rho_norms}
    R_sup, W_sup, speed_sup = support_functions(e)
    return DiagnosticRecord(
        time=float(e.time),
        total_mass=total_mass(e),
        total_energy=total_energy(e, table),
        casimirs={casimir_column(c): casimir(e, c) for c in cfg.casimirs},
        E_norms=E,
        rho_norms=rho,
        R_sup=R_sup,
        W_sup=W_sup,
        speed_sup=speed_sup,
        clamp_events=int(clamp_events),
    )


def series(records, getter):
    """(times, values) arrays from a record list; ``getter`` is a callable or attribute name."""
    if isinstance(getter, str):
        name = getter
        getter = lambda rec: getattr(rec, name)
    t = np.array([rec.time for rec in records])
    v = np.array([getter(rec) for rec in records], dtype=float)
    return t, v


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    t_min: float
    t_max: float
    n: int
    degenerate: bool = False

    def as_dict(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "window": [self.t_min, self.t_max],
            "n": self.n,
            "degenerate": self.degenerate,
        }


MIN_FIT_SAMPLES = 8


def fit_exponent(times, values, window=None, shift=0.0):
    """Least-squares slope of log(value) against log(time + shift) in ``window``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is None:
        window = (t[-1] / 10.0, t[-1])
    t_min, t_max = float(window[0]), float(window[1])
    if not t_min < t_max:
        raise ValueError("fit window must satisfy t_min < t_max")
    keep = (t >= t_min) & (t <= t_max)
    n = int(np.count_nonzero(keep))
    if n < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} samples in the fit window, got {n}")
    if np.any(v[keep] <= 0):
        raise ValueError("values in the fit window must be positive")
    x = np.log(t[keep] + shift)
    if np.any(~np.isfinite(x)):
        raise ValueError("log of time is undefined in the fit window")
    res = stats.linregress(x, np.log(v[keep]))
    return FitResult(float(res.slope), float(res.intercept), float(res.stderr), t_min, t_max, n)


def relative_variation(values):
    v = np.asarray(values, dtype=float)
    return float((np.max(v) - np.min(v)) / np.mean(v))


def turning_time(times, w):
    """First zero of W, linearly interpolated between samples; None if W never turns."""
    w = np.asarray(w)
    idx = np.flatnonzero((w[:-1] < 0) & (w[1:] >= 0))
    if idx.size == 0:
        return None
    i = int(idx[0])
    t0, t1, w0, w1 = times[i], times[i + 1], w[i], w[i + 1]
    return float(t0 - w0 * (t1 - t0) / (w1 - w0))


@dataclass
class InequalityTally:
    checks: int = 0
    violations: int = 0
    worst: float = math.inf  # smallest lhs / rhs margin observed

    def add(self, lhs, rhs):
        lhs = np.atleast_1d(lhs)
        rhs = np.atleast_1d(rhs)
        self.checks += lhs.size
        self.violations += int(np.count_nonzero(lhs < rhs))
        with np.errstate(divide="ignore", invalid="ignore"):
            margin = np.where(rhs > 0, lhs / rhs, math.inf)
        if margin.size:
            self.worst = min(self.worst, float(np.min(margin)))

    def as_dict(self):
        return {"checks": self.checks, "violations": self.violations, "passed": self.violations == 0,
                "worst_ratio": None if math.isinf(self.worst) else self.worst}


def convexity_suite(trajectories, model, slack=1e-6):
    """Lower bounds on R(t)^2, the turning time and the minimal radius.

    Each tracked trajectory starts at t = 0 from (r, w, ell). Right-hand
    sides are scaled by ``1 - slack`` before comparison.
    """
    model = ModelTag.coerce(model)
    keep = 1.0 - slack
    out = {name: InequalityTally() for name in ("radius_growth", "turning_time", "minimum_radius")}
    for tr in trajectories:
        if tr.ell <= 0:
            continue
        t = tr.times - tr.times[0]
        r, w, ell = float(tr.r[0]), float(tr.w[0]), tr.ell
        gamma0 = math.sqrt(1.0 + w * w + ell / (r * r))
        coeff = ell / (r * r)
        if model is ModelTag.RELATIVISTIC:
            coeff /= gamma0 * gamma0
        out["radius_growth"].add(tr.r ** 2, keep * coeff * t ** 2)
        if w < 0:
            bound = -w * r ** 3 / ell
            if model is ModelTag.RELATIVISTIC:
                bound *= gamma0
            t1 = turning_time(t, tr.w)
            if t1 is not None:
                # T1 <= bound, written as bound >= T1 * (1 - slack)
                out["turning_time"].add(bound, keep * t1)
            elif t[-1] > bound:
                out["turning_time"].add(0.0, 1.0)
            d = math.sqrt(ell / (ell + r * r * w * w))
            out["minimum_radius"].add(np.min(tr.r), keep * d * r)
        else:
            out["minimum_radius"].add(np.min(tr.r), keep * r)
    return out

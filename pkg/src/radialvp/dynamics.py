"""Characteristic integration for the classical and relativistic systems."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .field import FieldHistory, build_field_table, sorted_field
from .phase import Ensemble, ModelTag, RadialPoint

R_FLOOR = 1e-8
INTEGRATORS = ("rk4", "leapfrog")


class StepError(RuntimeError):
    """A particle reached r <= 0 or the state became non-finite."""


@dataclass(frozen=True)
class StepConfig:
    dt: float = 5e-3
    t_end: float = 0.0
    record_every: int = 20
    integrator: str = "rk4"
    self_consistent: bool = True
    track_every: int = 0
    threads: int = 1
    crossing_correction: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def track_cadence(self):
        return self.track_every or self.record_every


@dataclass
class Trajectory:
    """Samples of one characteristic (R, W, ell) plus the local m(t, R)."""

    times: np.ndarray
    r: np.ndarray
    w: np.ndarray
    ell: float
    m: np.ndarray
    index: int = -1

    @property
    def start(self):
        return RadialPoint(float(self.r[0]), float(self.w[0]), float(self.ell))

    def window(self, t_min, t_max):
        keep = (self.times >= t_min) & (self.times <= t_max)
        return Trajectory(self.times[keep], self.r[keep], self.w[keep], self.ell, self.m[keep], self.index)


def _check_positive_radius(p):
    if p.r <= 0:
        raise ValueError("characteristic right-hand side requires r > 0")


def rhs_classical(p, m_at_r):
    """(dR/dt, dW/dt) = (W, ell / R^3 + m / R^2)."""
    _check_positive_radius(p)
    return p.w, p.ell / p.r ** 3 + m_at_r / p.r ** 2


def rhs_relativistic(p, m_at_r):
    """(W / gamma, ell / (R^3 gamma) + m / R^2), gamma = sqrt(1 + W^2 + ell / R^2)."""
    _check_positive_radius(p)
    gamma = math.sqrt(1.0 + p.w * p.w + p.ell / (p.r * p.r))
    return p.w / gamma, p.ell / (p.r ** 3 * gamma) + m_at_r / p.r ** 2


def derivatives(model, r, w, ell, m):
    """Vectorised right-hand side of either characteristic system."""
    inv_r2 = 1.0 / (r * r)
    if ModelTag.coerce(model) is ModelTag.CLASSICAL:
        return w, (ell / r + m) * inv_r2
    gamma = np.sqrt(1.0 + w * w + ell * inv_r2)
    return w / gamma, (ell / (r * gamma) + m) * inv_r2


def free_stream_exact(p, t, model=ModelTag.CLASSICAL):
    """Closed-form field-free characteristic after time ``t``."""
    model = ModelTag.coerce(model)
    r, w, ell = (np.asarray(v, dtype=float) for v in (p.r, p.w, p.ell))
    R, W = free_stream_arrays(r, w, ell, t, model)
    return RadialPoint(float(R), float(W), float(ell))


def free_stream_arrays(r, w, ell, t, model):
    model = ModelTag.coerce(model)
    speed2 = w * w + ell / (r * r)
    scale = 1.0 if model is ModelTag.CLASSICAL else 1.0 / np.sqrt(1.0 + speed2)
    R = np.sqrt(r * r + 2.0 * r * w * scale * t + speed2 * (scale * t) ** 2)
    W = (r * w + speed2 * scale * t) / R
    return R, W


_RK4_WEIGHTS = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0
_KDK_WEIGHTS = np.array([0.5, 0.5])


class _SelfField:
    """Frozen field table plus the per-particle self-shell correction."""

    def __init__(self, table, r0, weight):
        self.radii = table.radii
        self.cum_ext = np.concatenate(([0.0], table.cumulative))
        self.half_at = 0.5 * table.mass_at
        self.r0 = r0
        self.half_self = 0.5 * weight
        self.n = self.radii.shape[0]

    def mass(self, r):
        k = np.searchsorted(self.radii, r, side="left")
        m = self.cum_ext[k]
        kc = np.minimum(k, self.n - 1)
        tie = (self.radii[kc] == r) & (k < self.n)
        if tie.any():
            m = m + np.where(tie, self.half_at[kc], 0.0)
        # the particle's own shell counts with weight one half wherever it is evaluated
        r0, hs = self.r0, self.half_self
        return m + np.where(r > r0, -hs, np.where(r < r0, hs, 0.0))


def _chunks(n, threads):
    if threads <= 1 or n < 2 * threads:
        return [slice(0, n)]
    bounds = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class FrozenField:
    """Field table built once per step together with the sort that produced it."""

    table: object
    order: np.ndarray
    group: np.ndarray


class Integrator:
    """Advances an ensemble one step at a time and counts clamp events."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.clamp_events = 0
        self._pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def field_for(self, e, previous=None):
        if not self.cfg.self_consistent:
            return None
        hint = previous.order if previous is not None else None
        order, table, group = sorted_field(e, hint)
        return FrozenField(table, order, group)

    def step(self, e, frozen=None):
        """Advance ``e`` in place by one ``dt`` using the pre-step field."""
        cfg = self.cfg
        if frozen is None and cfg.self_consistent:
            frozen = self.field_for(e)
        if cfg.integrator == "rk4":
            self._rk4(e, frozen)
        else:
            self._leapfrog(e, frozen)
        if not (np.all(np.isfinite(e.r)) and np.all(np.isfinite(e.w))):
            raise StepError(f"non-finite state at t={e.time + cfg.dt:g}")
        bad = e.r <= 0.0
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise StepError(
                f"particle {i} reached r={e.r[i]:.3g} <= 0 at t={e.time + cfg.dt:g} "
                f"(ell={e.ell[i]:g}); inbound radial orbits are not supported"
            )
        steps = e.meta.get("steps", 0) + 1
        e.meta["steps"] = steps
        e.time = e.meta.get("t0", 0.0) + steps * cfg.dt

    def _rk4(self, e, frozen):
        cfg = self.cfg
        n = len(e)
        if frozen is None:
            order = np.argsort(e.r, kind="stable")
            group = np.zeros(n, dtype=np.int64)
            radii = cum_ext = half_at = np.zeros(1)
        else:
            order, group = frozen.order, frozen.group
            t = frozen.table
            radii = t.radii
            cum_ext = np.concatenate(([0.0], t.cumulative))
            half_at = 0.5 * t.mass_at
        r, w, ell, mu = e.r[order], e.w[order], e.ell[order], e.weight[order]
        r_out = np.empty(n)
        w_out = np.empty(n)
        stages = np.empty((n, 4))
        args = (r, w, ell, mu, group, radii, cum_ext, half_at, cfg.dt,
                e.model is ModelTag.RELATIVISTIC, frozen is not None, R_FLOOR)
        chunks = _chunks(n, cfg.threads)
        if len(chunks) == 1:
            clamps = _kernels.rk4_sorted(*args, 0, n, r_out, w_out, stages)
        else:
            futures = [
                self._pool.submit(_kernels.rk4_sorted, *args, s.start, s.stop, r_out, w_out, stages)
                for s in chunks
            ]
            clamps = sum(f.result() for f in futures)
        self.clamp_events += int(clamps)
        if frozen is not None and cfg.crossing_correction:
            # every stage sees the other shells at their pre-step radii
            seen = np.repeat(r[:, None], 4, axis=1)
            w_out += _kernels.crossing_impulses(r, r_out, stages, seen, _RK4_WEIGHTS, mu, cfg.dt)
        e.r = np.empty(n)
        e.w = np.empty(n)
        e.r[order] = r_out
        e.w[order] = w_out

    def _field_accel(self, e, frozen):
        # m / r^2 only; the centrifugal term lives in the exact free flight
        if frozen is None:
            return np.zeros_like(e.r)
        m = _SelfField(frozen.table, e.r, e.weight).mass(e.r)
        r = np.maximum(e.r, R_FLOOR)
        self.clamp_events += int(np.count_nonzero(e.r < R_FLOOR))
        return m / (r * r)

    def _leapfrog(self, e, frozen):
        # field half kick, exact free flight, field half kick (the field is rebuilt after the flight)
        dt = self.cfg.dt
        r0 = e.r
        e.w = e.w + 0.5 * dt * self._field_accel(e, frozen)
        # purely radial infall passes through the origin; leave r <= 0 so step() reports it
        scale = 1.0 if e.model is ModelTag.CLASSICAL else 1.0 / np.sqrt(1.0 + e.w * e.w)
        through = (e.ell == 0.0) & (e.r + e.w * scale * dt <= 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            R, W = free_stream_arrays(e.r, e.w, e.ell, dt, e.model)
        if through.any():
            R = np.where(through, e.r + e.w * scale * dt, R)
            W = np.where(through, e.w, W)
        e.r, e.w = R, W
        if np.any(e.r <= 0.0):
            return
        if frozen is None:
            return
        e.w = e.w + 0.5 * dt * self._field_accel(e, self.field_for(e))
        if self.cfg.crossing_correction:
            # the two half kicks see the shells at their start and end radii
            both = np.column_stack([r0, e.r])
            e.w = e.w + _kernels.crossing_impulses(r0, e.r, both, both, _KDK_WEIGHTS, e.weight, dt)


def particle_mass(table, e, idx):
    """m(t, R) felt by particles ``idx`` at their own radii (half self-shell)."""
    if table is None:
        return np.zeros(len(idx))
    return _SelfField(table, e.r[idx], e.weight[idx]).mass(e.r[idx])


@dataclass
class RunResult:
    ensemble: Ensemble
    records: list
    trajectories: list
    history: FieldHistory
    snapshots: dict = field(default_factory=dict)
    clamp_events: int = 0


class _TrackBuffer:
    def __init__(self, idx, ell):
        self.idx = np.asarray(idx, dtype=int)
        self.ell = ell[self.idx]
        self.t, self.r, self.w, self.m = [], [], [], []

    def add(self, t, e, m):
        self.t.append(t)
        self.r.append(e.r[self.idx].copy())
        self.w.append(e.w[self.idx].copy())
        self.m.append(m)

    def trajectories(self):
        if not self.idx.size:
            return []
        t = np.asarray(self.t)
        r = np.asarray(self.r).reshape(t.size, -1)
        w = np.asarray(self.w).reshape(t.size, -1)
        m = np.asarray(self.m).reshape(t.size, -1)
        return [
            Trajectory(t, r[:, j].copy(), w[:, j].copy(), float(self.ell[j]), m[:, j].copy(), int(i))
            for j, i in enumerate(self.idx)
        ]


def run(e, cfg, measure=None, tracked=(), snapshot_times=(), history_quantiles=1024, progress=None):
    """Integrate ``e`` to ``cfg.t_end``.

    ``measure(ensemble, table, clamp_events)`` produces one diagnostic record
    and is called every ``record_every`` steps and at the final time. Tracked
    particle indices are sampled every ``cfg.track_cadence`` steps, as is the
    field history used later for test-particle continuation.
    """
    e = e.copy()
    e.meta["t0"] = e.time
    e.meta["steps"] = 0
    integ = Integrator(cfg)
    n_steps = cfg.n_steps
    snap_steps = {}
    for ts in snapshot_times:
        k = int(round((ts - e.time) / cfg.dt))
        if 0 <= k <= n_steps:
            snap_steps[k] = float(ts)
    history = FieldHistory(float(np.sum(e.weight)) if cfg.self_consistent else 0.0, history_quantiles)
    tracks = _TrackBuffer(tracked, e.ell)
    records, snapshots = [], {}

    def observe(k, frozen):
        table = frozen.table if frozen is not None else None
        last = k == n_steps
        if k % cfg.track_cadence == 0 or last:
            full = table if table is not None else build_field_table(e)
            history.record(e.time, full)
            if len(tracks.idx):
                tracks.add(e.time, e, particle_mass(table, e, tracks.idx))
        if measure is not None and (k % cfg.record_every == 0 or last):
            records.append(measure(e, table, integ.clamp_events))
        if k in snap_steps:
            snap = e.copy()
            snap.meta = {"time": snap_steps[k]}
            snapshots[snap_steps[k]] = snap

    try:
        frozen = integ.field_for(e)
        observe(0, frozen)
        for k in range(1, n_steps + 1):
            integ.step(e, frozen)
            frozen = integ.field_for(e, frozen)
            observe(k, frozen)
            if progress is not None:
                progress(k, n_steps)
    finally:
        integ.close()
    return RunResult(e, records, tracks.trajectories(), history.freeze(), snapshots, integ.clamp_events)


def integrate_in_history(history, r, w, ell, t0, t1, dt, model, sample_every=1):
    """Advance test characteristics through a recorded field history.

    Test particles do not contribute to the field. Returns
    ``(times, R, W, M)`` with one row per sample (including ``t0`` and ``t1``).
    """
    model = ModelTag.coerce(model)
    r = np.array(r, dtype=float, ndmin=1)
    w = np.array(w, dtype=float, ndmin=1)
    ell = np.broadcast_to(np.asarray(ell, dtype=float), r.shape).copy()
    n = max(1, int(math.ceil((t1 - t0) / dt - 1e-9))) if t1 > t0 else 0
    h = (t1 - t0) / n if n else 0.0

    def f(t, rr, ww):
        rr = np.maximum(rr, R_FLOOR)
        return derivatives(model, rr, ww, ell, history.mass(t, rr))

    times, Rs, Ws, Ms = [t0], [r.copy()], [w.copy()], [history.mass(t0, r)]
    t = t0
    for k in range(1, n + 1):
        k1r, k1w = f(t, r, w)
        k2r, k2w = f(t + 0.5 * h, r + 0.5 * h * k1r, w + 0.5 * h * k1w)
        k3r, k3w = f(t + 0.5 * h, r + 0.5 * h * k2r, w + 0.5 * h * k2w)
        k4r, k4w = f(t + h, r + h * k3r, w + h * k3w)
        r = r + (h / 6.0) * (k1r + 2 * k2r + 2 * k3r + k4r)
        w = w + (h / 6.0) * (k1w + 2 * k2w + 2 * k3w + k4w)
        t = t0 + k * h
        if np.any(r <= 0):
            raise StepError(f"test particle reached r <= 0 at t={t:g}")
        if k % sample_every == 0 or k == n:
            times.append(t)
            Rs.append(r.copy())
            Ws.append(w.copy())
            Ms.append(history.mass(t, r))
    return np.asarray(times), np.asarray(Rs), np.asarray(Ws), np.asarray(Ms)

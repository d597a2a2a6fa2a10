import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radialvp.diagnostics import DiagnosticsConfig, measure, total_energy
from radialvp.dynamics import (
    Integrator,
    StepConfig,
    StepError,
    derivatives,
    free_stream_arrays,
    free_stream_exact,
    integrate_in_history,
    rhs_classical,
    rhs_relativistic,
    run,
)
from radialvp.field import FieldHistory, build_field_table, enclosed_mass
from radialvp.initial import QuadratureSpec, SmoothBox, build_ensemble
from radialvp.phase import Ensemble, RadialPoint


def single(r, w, ell, mu=1.0, model="classical"):
    return Ensemble(np.array([r]), np.array([w]), np.array([ell]), np.array([mu]), model=model)


@pytest.mark.parametrize(
    "p, m, expected",
    [((1, 0, 1), 0, (0, 1)), ((1, 0, 1), 1, (0, 2)), ((2, -1, 0), 1, (-1, 0.25))],
)
def test_rhs_classical_examples(p, m, expected):
    assert rhs_classical(RadialPoint(*p), m) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize(
    "p, m, expected",
    [
        ((1, 0, 1), 0, (0, 1 / math.sqrt(2))),
        ((1, 0, 1), 1, (0, 1 / math.sqrt(2) + 1)),
        ((2, -1, 0), 0, (-1 / math.sqrt(2), 0)),
    ],
)
def test_rhs_relativistic_examples(p, m, expected):
    assert rhs_relativistic(RadialPoint(*p), m) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("rhs", [rhs_classical, rhs_relativistic])
def test_rhs_rejects_origin(rhs):
    with pytest.raises(ValueError):
        rhs(RadialPoint(0.0, 1.0, 1.0), 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-1e3, 1e3), st.floats(0, 1e3), st.floats(0, 10))
def test_relativistic_speed_below_one(r, w, ell, m):
    v, _ = rhs_relativistic(RadialPoint(r, w, ell), m)
    assert abs(v) < 1.0


def test_free_stream_examples():
    q = free_stream_exact(RadialPoint(1, 0, 1), 2.0)
    assert (q.r, q.w) == pytest.approx((math.sqrt(5), 2 / math.sqrt(5)), rel=1e-15)
    q = free_stream_exact(RadialPoint(1, -1, 1), 0.5)
    assert q.r == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert q.w == pytest.approx(0.0, abs=1e-15)
    q = free_stream_exact(RadialPoint(1, 0, 1), 2.0, "relativistic")
    assert q.r == pytest.approx(math.sqrt(3), rel=1e-15)
    assert q.w ** 2 + 1 / q.r ** 2 == pytest.approx(1.0, rel=1e-14)


def test_free_stream_closed_form_solves_the_ode():
    # the derivative of the closed form equals the right-hand side with m = 0
    r, w, ell = 1.3, -0.4, 0.7
    for model in ("classical", "relativistic"):
        for t in (0.3, 1.0, 4.0):
            h = 1e-5
            Rp, Wp = free_stream_arrays(r, w, ell, t + h, model)
            Rm, Wm = free_stream_arrays(r, w, ell, t - h, model)
            R, W = free_stream_arrays(r, w, ell, t, model)
            dr, dw = derivatives(model, R, W, ell, 0.0)
            assert (Rp - Rm) / (2 * h) == pytest.approx(dr, rel=1e-8)
            assert (Wp - Wm) / (2 * h) == pytest.approx(dw, rel=1e-8)


def _free_run(p, t_end, dt, model):
    e = single(*p, model=model)
    cfg = StepConfig(dt=dt, t_end=t_end, self_consistent=False)
    return run(e, cfg).ensemble


def test_free_stream_step_examples():
    e = _free_run((1, 0, 1), 1.0, 1e-3, "classical")
    assert e.r[0] == pytest.approx(math.sqrt(2), rel=1e-8)
    assert e.w[0] == pytest.approx(1 / math.sqrt(2), rel=1e-8)
    e = _free_run((1, 0, 1), 2.0, 1e-3, "relativistic")
    assert e.r[0] == pytest.approx(math.sqrt(3), rel=1e-8)


def test_free_stream_conserves_speed_and_w_increases():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(4, 4, 4))
    cfg = StepConfig(dt=5e-3, t_end=5.0, self_consistent=False, record_every=10)
    res = run(e0, cfg, tracked=range(len(e0)))
    for tr in res.trajectories:
        s2 = tr.w ** 2 + tr.ell / tr.r ** 2
        assert np.max(np.abs(s2 - s2[0])) / s2[0] < 1e-10
        assert np.all(np.diff(tr.w) > 0)


def test_ell_and_weights_untouched():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(6, 4, 6))
    res = run(e0, StepConfig(dt=1e-2, t_end=1.0))
    assert np.array_equal(res.ensemble.ell, e0.ell)
    assert np.array_equal(res.ensemble.weight, e0.weight)


def test_t_end_zero_records_initial_state_only():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(4, 4, 4))
    dcfg = DiagnosticsConfig()
    res = run(e0, StepConfig(t_end=0.0), measure=lambda e, table, n: measure(e, table, n, dcfg))
    assert len(res.records) == 1 and res.records[0].time == 0.0
    assert np.array_equal(res.ensemble.r, e0.r)


def test_inbound_radial_particle_aborts():
    e = single(1.0, -1.0, 0.0)
    with pytest.raises(StepError):
        run(e, StepConfig(dt=1e-2, t_end=2.0, self_consistent=False))


def _reference_rk4(e, dt):
    """Plain numpy RK4 with the frozen table and the half self-shell correction."""
    table = build_field_table(e)

    def m_of(r):
        m = enclosed_mass(table, r)
        return m + np.where(r > e.r, -0.5 * e.weight, np.where(r < e.r, 0.5 * e.weight, 0.0))

    def f(r, w):
        return derivatives(e.model, r, w, e.ell, m_of(r))

    k1 = f(e.r, e.w)
    k2 = f(e.r + 0.5 * dt * k1[0], e.w + 0.5 * dt * k1[1])
    k3 = f(e.r + 0.5 * dt * k2[0], e.w + 0.5 * dt * k2[1])
    k4 = f(e.r + dt * k3[0], e.w + dt * k3[1])
    r = e.r + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    w = e.w + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return r, w


@pytest.mark.parametrize("model", ["classical", "relativistic"])
def test_compiled_step_matches_numpy_reference(model):
    rng = np.random.default_rng(4)
    n = 500
    e = Ensemble(rng.uniform(0.5, 3, n), rng.normal(0, 1, n), rng.uniform(0.1, 2, n), rng.uniform(0, 0.01, n),
                 model=model)
    r_ref, w_ref = _reference_rk4(e, 0.05)
    Integrator(StepConfig(dt=0.05, crossing_correction=False)).step(e)
    assert np.allclose(e.r, r_ref, rtol=1e-13, atol=1e-13)
    assert np.allclose(e.w, w_ref, rtol=1e-13, atol=1e-13)


def test_single_shell_energy_conserved():
    # one particle feels half its own mass, a conservative central force
    e = single(1.0, 0.3, 0.8, mu=0.5)
    table = build_field_table(e)
    E0 = total_energy(e, table)
    res = run(e, StepConfig(dt=1e-3, t_end=5.0))
    e1 = res.ensemble
    assert total_energy(e1, build_field_table(e1)) == pytest.approx(E0, rel=1e-10)


def test_threads_reproduce_single_thread():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(8, 8, 8))
    a = run(e0, StepConfig(dt=1e-2, t_end=0.5)).ensemble
    b = run(e0, StepConfig(dt=1e-2, t_end=0.5, threads=3)).ensemble
    assert np.array_equal(a.r, b.r) and np.array_equal(a.w, b.w)


def test_runs_are_bitwise_reproducible():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(8, 8, 8))
    cfg = StepConfig(dt=1e-2, t_end=0.5)
    a, b = run(e0, cfg).ensemble, run(e0, cfg).ensemble
    assert np.array_equal(a.r, b.r) and np.array_equal(a.w, b.w)


@pytest.mark.parametrize("model", ["classical", "relativistic"])
def test_leapfrog_conserves_energy_reasonably(model):
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(8, 8, 8), model)
    E0 = total_energy(e0, build_field_table(e0))
    e1 = run(e0, StepConfig(dt=2e-3, t_end=2.0, integrator="leapfrog")).ensemble
    assert total_energy(e1, build_field_table(e1)) == pytest.approx(E0, rel=5e-3)


def test_interacting_energy_drift_small():
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(16, 16, 16))
    dcfg = DiagnosticsConfig(e_norms=(2.0,), rho_norms=(1.0,))
    res = run(e0, StepConfig(dt=1e-3, t_end=100.0, record_every=500),
              measure=lambda e, table, n: measure(e, table, n, dcfg))
    E = np.array([r.total_energy for r in res.records])
    assert np.max(np.abs(E - E[0])) / E[0] < 5e-3


def test_history_continuation_matches_free_stream_when_field_is_off():
    h = FieldHistory.from_arrays(np.array([0.0, 10.0]), np.zeros((2, 5)), 0.0)
    r, w, ell = np.array([1.0, 2.0]), np.array([0.0, -0.3]), np.array([1.0, 0.5])
    for model in ("classical", "relativistic"):
        t, R, W, M = integrate_in_history(h, r, w, ell, 0.0, 10.0, 0.01, model)
        R_ex, W_ex = free_stream_arrays(r, w, ell, 10.0, model)
        assert np.allclose(R[-1], R_ex, rtol=1e-9) and np.allclose(W[-1], W_ex, rtol=1e-9)
        assert np.all(M == 0)


def _brute_crossing(r0, r1, stages, seen, weights, mu, dt):
    """Pair-by-pair impulse differences, no interval sweep."""
    n = r0.size
    dw = np.zeros(n)
    rc2 = (0.5 * (r0 + r1)) ** 2
    for i in range(n):
        for p in range(n):
            if i == p:
                continue
            d0, d1 = r0[i] - r0[p], r1[i] - r1[p]
            if d0 > 0 and d1 > 0:
                f = 1.0
            elif d0 <= 0 and d1 <= 0:
                f = 0.0
            else:
                theta = d0 / (d0 - d1)
                f = theta if d0 > 0 else 1 - theta
            g = np.sum(weights * np.where(stages[i] > seen[p], 1.0, np.where(stages[i] == seen[p], 0.5, 0.0)))
            dw[i] += dt * mu[p] * (f - g) / rc2[i]
    return dw


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2 ** 31))
def test_crossing_impulses_match_pairwise_sum(n, seed):
    from radialvp._kernels import crossing_impulses

    rng = np.random.default_rng(seed)
    r0 = rng.uniform(1, 1.2, n)
    v = rng.normal(0, 1, n)
    dt = 0.05
    r1 = r0 + dt * v
    stages = np.column_stack([r0, r0 + 0.5 * dt * v * 1.01, r0 + 0.5 * dt * v * 0.99, r0 + dt * v * 1.02])
    seen = np.repeat(r0[:, None], 4, axis=1)
    weights = np.array([1.0, 2.0, 2.0, 1.0]) / 6.0
    mu = rng.uniform(0, 1, n)
    got = crossing_impulses(r0, r1, stages, seen, weights, mu, dt)
    assert np.allclose(got, _brute_crossing(r0, r1, stages, seen, weights, mu, dt), rtol=1e-12, atol=1e-15)


def test_crossing_impulses_vanish_without_crossings():
    from radialvp._kernels import crossing_impulses

    r0 = np.array([1.0, 2.0, 3.0])
    r1 = r0 + 0.01
    both = np.column_stack([r0, r1])
    dw = crossing_impulses(r0, r1, both, both, np.array([0.5, 0.5]), np.ones(3), 0.01)
    assert np.array_equal(dw, np.zeros(3))


def _drift(model, integrator, correction, dt):
    e0 = build_ensemble(SmoothBox(), QuadratureSpec(8, 8, 8), model)
    dcfg = DiagnosticsConfig(e_norms=(2.0,), rho_norms=(1.0,))
    cfg = StepConfig(dt=dt, t_end=10.0, record_every=int(round(0.1 / dt)), integrator=integrator,
                     crossing_correction=correction)
    res = run(e0, cfg, measure=lambda e, table, n: measure(e, table, n, dcfg))
    E = np.array([r.total_energy for r in res.records])
    return np.max(np.abs(E - E[0])) / E[0]


@pytest.mark.parametrize("integrator", ["rk4", "leapfrog"])
@pytest.mark.parametrize("model", ["classical", "relativistic"])
def test_energy_error_is_second_order_with_crossing_correction(model, integrator):
    ratio = _drift(model, integrator, True, 0.01) / _drift(model, integrator, True, 0.005)
    assert ratio > 3.0


def test_shell_crossings_make_the_frozen_scheme_first_order():
    ratio = _drift("classical", "rk4", False, 0.01) / _drift("classical", "rk4", False, 0.005)
    assert 1.5 < ratio < 3.0


@pytest.mark.parametrize("model", ["classical", "relativistic"])
def test_leapfrog_free_flight_is_exact(model):
    e = build_ensemble(SmoothBox(), QuadratureSpec(4, 4, 4), model)
    R, W = free_stream_arrays(e.r, e.w, e.ell, 3.0, model)
    e1 = run(e, StepConfig(dt=0.1, t_end=3.0, integrator="leapfrog", self_consistent=False)).ensemble
    assert np.allclose(e1.r, R, rtol=1e-12) and np.allclose(e1.w, W, rtol=1e-12, atol=1e-14)


def test_leapfrog_reports_radial_infall():
    with pytest.raises(StepError):
        run(single(1.0, -1.0, 0.0), StepConfig(dt=1e-2, t_end=2.0, integrator="leapfrog", self_consistent=False))

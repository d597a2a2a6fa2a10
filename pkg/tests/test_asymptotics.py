import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radialvp.asymptotics import (
    EstimatorError,
    MomentumGrid,
    build_finf,
    characteristic_sensitivity,
    check_limit_identities,
    dwinf_dw,
    estimate_winf,
    extrapolate_limit,
    fconv_check,
    grid_moments,
    node_edges,
    omega_invariance,
    spatial_asymptote_residual,
    spatial_average,
    uniform_edges,
    winf_from_snapshot,
    winf_integral,
    winf_late,
    winf_rate_check,
)
from radialvp.dynamics import Trajectory, free_stream_arrays
from radialvp.field import FieldHistory
from radialvp.phase import Ensemble

FOUR_PI_SQ = 4 * math.pi ** 2


def free_traj(p, model="classical", t_end=100.0, dt=0.05, tau=0.0):
    t = np.arange(0.0, t_end - tau + 0.5 * dt, dt)
    R, W = free_stream_arrays(p[0], p[1], p[2], t, model)
    return Trajectory(t + tau, R, W, p[2], np.zeros_like(t))


def empty_history(t_end=100.0):
    return FieldHistory.from_arrays(np.array([0.0, t_end]), np.zeros((2, 9)), 0.0)


@pytest.mark.parametrize("model", ["classical", "relativistic"])
def test_winf_late_free_stream(model):
    assert winf_late(free_traj((1, 0, 1), model), model=model) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 3), st.floats(-1, 2), st.floats(0.1, 3))
def test_winf_late_free_stream_any_state(r, w, ell):
    tr = free_traj((r, w, ell))
    exact = math.sqrt(w * w + ell / r ** 2)
    assert winf_late(tr) == pytest.approx(exact, abs=1e-6)


def test_winf_late_errors():
    with pytest.raises(EstimatorError):
        winf_late(free_traj((1, 0, 1), t_end=5.0))
    # purely radial inbound motion never reaches a positive late W
    t = np.linspace(0, 20, 401)
    tr = Trajectory(t, 2 + 0 * t, -np.ones_like(t), 0.0, 0 * t)
    with pytest.raises(EstimatorError):
        winf_late(tr)


def test_extrapolate_power_law_tail():
    t = np.array([5.0, 11.0, 23.0, 47.0, 95.0])
    y = 2.0 - 3.0 * (1 + t) ** -1.5
    assert extrapolate_limit(t, y) == pytest.approx(2.0, abs=1e-10)


@pytest.mark.parametrize(
    "p, model, exact",
    [((1, 0, 1), "classical", 1.0), ((1, 0, 1), "relativistic", 1.0), ((2, 1, 0), "classical", 1.0)],
)
def test_winf_integral_without_field(p, model, exact):
    assert winf_integral(free_traj(p, model, t_end=20.0), model) == pytest.approx(exact, abs=1e-14)


def test_winf_integral_radial_force():
    # a constant m over a radial orbit: W_inf = w + int m / R^2 dt
    t = np.linspace(0, 50, 50001)
    R = 1 + t
    tr = Trajectory(t, R, np.ones_like(t), 0.0, 0.5 * np.ones_like(t))
    value, tail = winf_integral(tr, "classical", with_tail=True)
    assert value == pytest.approx(1.5, rel=1e-3)
    assert tail == pytest.approx(0.5 * 50 / 51 ** 2)


def test_winf_integral_rejects_unphysical_data():
    t = np.linspace(0, 20, 201)
    tr = Trajectory(t, 1 + t, np.ones_like(t), 1.0, -50 * np.ones_like(t))
    with pytest.raises(EstimatorError):
        winf_integral(tr, "relativistic")


def test_rate_check_free_stream_and_synthetic():
    fit = winf_rate_check(free_traj((1, 0, 1)), 1.0)
    # 1 - t / sqrt(1 + t^2) ~ 1 / (2 t^2), a little steeper than -2 against log(1 + t)
    assert -2.15 < fit.slope < -2.0
    t = np.linspace(0, 100, 2001)
    tr = Trajectory(t, 1 + t, 1 - 1 / (1 + t), 0.0, 0 * t)
    assert winf_rate_check(tr, 1.0).slope == pytest.approx(-1.0, abs=1e-9)


def test_rate_check_degenerate_when_converged():
    t = np.linspace(0, 100, 2001)
    tr = Trajectory(t, 1 + t, np.ones_like(t), 0.0, 0 * t)
    fit = winf_rate_check(tr, 1.0)
    assert fit.degenerate and fit.slope == -math.inf


def test_estimators_agree_in_free_streaming():
    est = estimate_winf(free_traj((1, 0.3, 2)), "classical")
    assert est.agrees() and est.disagreement < 1e-6


def test_residual_closed_forms():
    tr = free_traj((1, 0, 1), t_end=40.0)
    res = spatial_asymptote_residual(tr, 1.0, "classical")
    i = int(np.argmin(np.abs(tr.times - 10)))
    assert res.residual[i] == pytest.approx(math.sqrt(101) - 11, abs=1e-12)
    tr = free_traj((1, 0, 1), "relativistic", t_end=40.0)
    res = spatial_asymptote_residual(tr, 1.0, "relativistic")
    t = tr.times
    assert np.allclose(res.residual, np.sqrt(1 + t * t / 2) - 1 - t / math.sqrt(2), atol=1e-12)


def test_residual_log_growth():
    t = np.linspace(0, 1e4, 20001)
    tr = Trajectory(t, 1 + t + np.log1p(t), 1 + 1 / (1 + t), 0.0, 0 * t)
    res = spatial_asymptote_residual(tr, 1.0, "classical")
    assert res.log_ratio()[-1] == pytest.approx(1.0, abs=1e-12)
    assert res.log_coefficient == pytest.approx(1.0, abs=1e-9)


def test_sensitivity_matches_closed_form_derivative():
    h = empty_history(20.0)
    s = characteristic_sensitivity(h, 1.0, 1.0, 1.0, 0.0, 20.0, "classical", delta_w=1e-4, dt=0.01)
    i = int(np.argmin(np.abs(s.times - 2.0)))
    R = math.sqrt(13.0)  # R(2)^2 = 1 + 2*2 + 2*4
    assert s.dR[i, 0] == pytest.approx((2 + 4) / R, rel=1e-6)
    assert s.linear.all()


@pytest.mark.parametrize("w, exact", [(1.0, 1 / math.sqrt(2)), (3.0, 3 / math.sqrt(10))])
def test_dwinf_dw_closed_form(w, exact):
    d = dwinf_dw(empty_history(), 1.0, w, 1.0, 0.0, 100.0, "classical", delta_w=1e-4)
    assert d[0] == pytest.approx(exact, rel=1e-6)


def test_sensitivity_rejects_zero_step():
    with pytest.raises(ValueError):
        characteristic_sensitivity(empty_history(), 1.0, 1.0, 1.0, 0.0, 10.0, "classical", delta_w=0.0)


def test_spatial_average_examples():
    e = Ensemble(np.array([3.0]), np.array([0.5]), np.array([2.0]), np.array([FOUR_PI_SQ]))
    g = spatial_average(e, [0, 1], [1.5, 2.5])
    assert g.value[0, 0] == pytest.approx(1.0)
    e = Ensemble(np.array([3.0, 7.0]), np.array([0.5, 0.2]), np.array([2.0, 1.9]), np.full(2, FOUR_PI_SQ))
    assert spatial_average(e, [0, 1], [1.5, 2.5]).value[0, 0] == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2 ** 31))
def test_spatial_average_preserves_mass(n, seed):
    rng = np.random.default_rng(seed)
    e = Ensemble(rng.uniform(1, 2, n), rng.normal(0, 1, n), rng.uniform(0, 2, n), rng.uniform(0, 1, n))
    g = spatial_average(e, uniform_edges(e.w, 7), uniform_edges(e.ell, 5))
    assert g.total_mass() == pytest.approx(float(np.sum(e.weight)), rel=1e-12)


def test_spatial_average_rejects_particles_off_grid():
    e = Ensemble(np.array([1.0]), np.array([5.0]), np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError):
        spatial_average(e, [0, 1], [0, 2])


def test_build_finf_single_particle():
    e = Ensemble(np.array([1.0]), np.array([0.0]), np.array([1.0]), np.array([FOUR_PI_SQ]))
    g = build_finf(e, np.array([1.0]), [0.5, 1.5, 2.5], [0.5, 1.5])
    assert g.mass[0, 0] == FOUR_PI_SQ and g.mass[1, 0] == 0.0


def test_node_edges_center_each_value():
    v = np.array([0.5, 1.0, 1.5, 1.0])
    edges = node_edges(v)
    assert np.allclose(0.5 * (edges[1:] + edges[:-1]), [0.5, 1.0, 1.5])


def test_identities_exact_for_free_streaming_lattice():
    r, w, ell = np.meshgrid([1.0, 1.5], [-0.5, 0.0, 0.5], [0.5, 1.0], indexing="ij")
    e = Ensemble(r.ravel(), w.ravel(), ell.ravel(), np.full(r.size, 0.3))
    u = np.sqrt(e.w ** 2 + e.ell / e.r ** 2)
    finf = build_finf(e, u, uniform_edges(u, 20000), node_edges(e.ell))
    ref = {"mass": float(np.sum(e.weight)), "casimir_identity": float(np.sum(e.weight * e.ell) / FOUR_PI_SQ),
           "energy": float(0.5 * np.sum(e.weight * u * u))}
    rep = check_limit_identities(finf, ref, "classical", ("identity",))
    assert rep["mass"]["relative_error"] < 1e-12
    assert rep["casimir_identity"]["relative_error"] < 1e-12
    # cell-center u shifts each energy term by at most half a bin
    assert rep["energy"]["relative_error"] < 1e-4
    assert set(grid_moments(finf, (), "relativistic")) == {"mass", "energy"}


def test_omega_invariance_free_streaming():
    rng = np.random.default_rng(1)
    n = 50
    r, w, ell = rng.uniform(1, 2, n), rng.uniform(-1, 1, n), rng.uniform(0.5, 1.5, n)
    h = empty_history(60.0)
    a = Ensemble(r, w, ell, np.full(n, 0.1))
    R, W = free_stream_arrays(r, w, ell, 10.0, "classical")
    b = Ensemble(R, W, ell, np.full(n, 0.1), time=10.0)
    rep = omega_invariance(h, a, 0.0, b, 10.0, "classical")
    assert max(rep["w_endpoint_relative_error"]) < 1e-8
    assert rep["ell_identical"] and rep["passed"]
    u = np.sqrt(w * w + ell / r ** 2)
    assert np.allclose(winf_from_snapshot(h, a, 0.0, "classical"), u, rtol=1e-12)


def _grid(values):
    return MomentumGrid(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]), np.asarray(values, dtype=float))


def test_fconv_degenerate_and_synthetic_rate():
    finf = _grid([[FOUR_PI_SQ], [2 * FOUR_PI_SQ]])
    t = np.linspace(0, 100, 41)
    same = fconv_check(t, [finf] * t.size, finf)
    assert same.passed and same.degenerate
    grids = [_grid(finf.mass * (1 + 1 / (1 + tt))) for tt in t]
    out = fconv_check(t, grids, finf)
    assert out.passed and out.decreasing
    # sup |F - F_inf| = 2 / (1 + t) against log t is slightly shallower than -1
    assert out.fit.slope == pytest.approx(-1.0, abs=0.05)


def test_fconv_rejects_mismatched_grids():
    finf = _grid([[1.0], [1.0]])
    other = MomentumGrid(np.array([0.0, 1.5, 2.0]), np.array([0.0, 1.0]), np.ones((2, 1)))
    with pytest.raises(ValueError):
        fconv_check([0.0, 1.0], [other, other], finf)

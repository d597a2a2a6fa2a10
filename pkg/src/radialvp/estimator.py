"""Estimator-style wrapper: fit runs a simulation, transform maps states to limiting momenta."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .asymptotics import winf_integral_arrays
from .diagnostics import DiagnosticsConfig, measure
from .dynamics import StepConfig, integrate_in_history, run
from .phase import Ensemble, ModelTag


def _check_states(X, n_columns):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] not in n_columns:
        raise ValueError(f"expected {' or '.join(map(str, n_columns))} columns, got {X.shape[1]}")
    if np.any(X[:, 0] <= 0):
        raise ValueError("r must be positive")
    if np.any(X[:, 2] < 0):
        raise ValueError("ell must be nonnegative")
    return X


class RadialVlasovSimulator(TransformerMixin, BaseEstimator):
    """Self-consistent run of a weighted particle ensemble.

    ``fit`` takes rows (r, w, ell, weight) and integrates them to ``t_end``,
    recording the enclosed-mass history. ``transform`` launches test
    characteristics (r, w, ell) at t = 0 in that recorded field and returns
    their limiting momentum together with ell. A fourth weight column is
    ignored by ``transform``, so ``fit_transform`` maps the fitted particles.
    """

    def __init__(self, model="classical", dt=5e-3, t_end=50.0, self_consistent=True,
                 integrator="rk4", record_every=20, history_quantiles=1024, continuation_dt=0.05):
        self.model = model
        self.dt = dt
        self.t_end = t_end
        self.self_consistent = self_consistent
        self.integrator = integrator
        self.record_every = record_every
        self.history_quantiles = history_quantiles
        self.continuation_dt = continuation_dt

    def fit(self, X, y=None):
        X = _check_states(X, (4,))
        if np.any(X[:, 3] < 0):
            raise ValueError("weights must be nonnegative")
        model = ModelTag.coerce(self.model)
        cfg = StepConfig(dt=self.dt, t_end=self.t_end, record_every=self.record_every,
                         integrator=self.integrator, self_consistent=self.self_consistent)
        e = Ensemble(X[:, 0].copy(), X[:, 1].copy(), X[:, 2].copy(), X[:, 3].copy(), model=model)
        dcfg = DiagnosticsConfig()
        result = run(e, cfg, measure=lambda s, table, c: measure(s, table, c, dcfg),
                     history_quantiles=self.history_quantiles)
        self.n_features_in_ = 4
        self.model_ = model
        self.ensemble_ = result.ensemble
        self.records_ = result.records
        self.history_ = result.history
        self.clamp_events_ = result.clamp_events
        return self

    def transform(self, X):
        check_is_fitted(self, "history_")
        X = _check_states(X, (3, 4))
        t_end = self.history_.t_end
        if t_end <= 0:
            raise ValueError("fitted run has t_end = 0; no limit can be estimated")
        times, R, W, M = integrate_in_history(self.history_, X[:, 0], X[:, 1], X[:, 2], 0.0, t_end,
                                              self.continuation_dt, self.model_)
        winf, _ = winf_integral_arrays(times, R, W, M, X[:, 2], self.model_)
        return np.column_stack([winf, X[:, 2]])

    def energy_drift(self):
        check_is_fitted(self, "records_")
        E = np.array([r.total_energy for r in self.records_])
        return float(np.max(np.abs(E - E[0])) / abs(E[0]))

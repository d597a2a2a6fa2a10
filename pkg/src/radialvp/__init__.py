"""Particle simulation of the spherically symmetric Vlasov-Poisson system.

Classical and relativistic plasma models in reduced coordinates (r, w, ell),
with decay-rate diagnostics and limiting-momentum analysis.
"""

from .asymptotics import estimate_winf, winf_integral, winf_late
from .config import RunConfig, load_config, parse_config
from .diagnostics import DiagnosticsConfig, fit_exponent, measure
from .dynamics import StepConfig, Trajectory, free_stream_exact, run
from .field import FieldHistory, build_field_table, enclosed_mass, field_lp_norm
from .initial import PointSet, QuadratureSpec, ShellGaussian, SmoothBox, build_ensemble
from .phase import Ensemble, ModelTag, RadialPoint, cartesian_to_radial

__all__ = [
    "DiagnosticsConfig",
    "Ensemble",
    "FieldHistory",
    "ModelTag",
    "PointSet",
    "QuadratureSpec",
    "RadialPoint",
    "RadialVlasovSimulator",
    "RunConfig",
    "ShellGaussian",
    "SmoothBox",
    "StepConfig",
    "Trajectory",
    "build_ensemble",
    "build_field_table",
    "cartesian_to_radial",
    "enclosed_mass",
    "estimate_winf",
    "field_lp_norm",
    "fit_exponent",
    "free_stream_exact",
    "load_config",
    "measure",
    "parse_config",
    "run",
    "winf_integral",
    "winf_late",
]


def __getattr__(name):
    # scikit-learn is only imported when the estimator wrapper is used
    if name == "RadialVlasovSimulator":
        from .estimator import RadialVlasovSimulator

        return RadialVlasovSimulator
    raise AttributeError(f"module 'radialvp' has no attribute {name!r}")

"""Run configuration: TOML parsing with defaults, validation and round-trip emission."""

import math
from dataclasses import asdict, dataclass, field, fields

import tomli
import tomli_w

from .diagnostics import DiagnosticsConfig
from .dynamics import StepConfig
from .initial import PROFILES, QuadratureSpec, ShellGaussian, SmoothBox
from .phase import ModelTag


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrackingConfig:
    per_axis: int = 4
    indices: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    model: ModelTag = ModelTag.CLASSICAL
    profile: object = field(default_factory=SmoothBox)
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    step: StepConfig = field(default_factory=StepConfig)
    diagnostics: DiagnosticsConfig = field(default_factory=DiagnosticsConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    fit_window: tuple = ()
    snapshot_times: tuple = ()
    history_quantiles: int = 1024
    output: str = "run"

    def resolved_fit_window(self):
        if self.fit_window:
            return self.fit_window
        return (self.step.t_end / 10.0, self.step.t_end)

    def resolved_snapshot_times(self):
        if self.snapshot_times:
            return self.snapshot_times
        return default_snapshot_times(self.step.t_end, self.step.dt)


def default_snapshot_times(t_end, dt):
    """1-2-5 geometric times, the late extrapolation times and 13 evenly spaced late times."""
    if t_end <= 0:
        return (0.0,)
    times = {0.0, float(t_end)}
    decade = 1.0
    while decade <= t_end:
        for m in (1.0, 2.0, 5.0):
            if m * decade <= t_end:
                times.add(m * decade)
        decade *= 10.0
    for j in range(5):
        times.add((1.0 + t_end) / 2.0 ** j - 1.0)
    for k in range(4, 17):
        times.add(t_end * k / 16.0)
    # land on the step grid so the recorded time equals the requested one
    snapped = {round(round(t / dt) * dt, 12) for t in times if t >= 0}
    return tuple(sorted(snapped))


# ------------------------------------------------------------------ parsing

_TOP = {"model", "profile", "quadrature", "step", "diagnostics", "tracking", "fit_window",
        "snapshot_times", "history_quantiles", "output"}
_STEP = {f.name for f in fields(StepConfig)}
_DIAG = {f.name for f in fields(DiagnosticsConfig)}
_QUAD = {f.name for f in fields(QuadratureSpec)}
_TRACK = {f.name for f in fields(TrackingConfig)}
_PROFILE = {
    "smooth_box": {"kind", "r", "w", "ell", "amplitude"},
    "shell_gaussian": {"kind", "center", "sigma", "amplitude"},
    "points": {"kind", "r", "w", "ell", "mass"},
}


def _unknown(section, allowed, path):
    extra = sorted(set(section) - allowed)
    if extra:
        key = f"{path}.{extra[0]}" if path else extra[0]
        raise ConfigError(f"unknown key '{key}'")


def _table(doc, key):
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a table")
    return value


def _exponent(value, path):
    if isinstance(value, str):
        if value.strip().lower() not in ("inf", "infinity"):
            raise ConfigError(f"{path}: expected a number or 'inf', got {value!r}")
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _build(path, cls, **kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _window(value, path, t_end):
    if not value:
        return ()
    if len(value) != 2:
        raise ConfigError(f"{path}: expected [t_min, t_max]")
    lo, hi = float(value[0]), float(value[1])
    if not (0.0 <= lo < hi <= t_end):
        raise ConfigError(f"{path}: window [{lo}, {hi}] must satisfy 0 <= t_min < t_max <= t_end = {t_end}")
    return (lo, hi)


def config_from_dict(doc):
    _unknown(doc, _TOP, "")
    try:
        model = ModelTag.coerce(doc.get("model", "classical"))
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None

    prof = dict(_table(doc, "profile"))
    kind = prof.get("kind", "smooth_box")
    if kind not in PROFILES:
        raise ConfigError(f"profile.kind: unknown profile {kind!r}; expected one of {sorted(PROFILES)}")
    _unknown(prof, _PROFILE[kind], "profile")
    prof.pop("kind", None)
    profile = _build("profile", PROFILES[kind], **{k: tuple(v) if isinstance(v, list) else v for k, v in prof.items()})

    quad_doc = _table(doc, "quadrature")
    _unknown(quad_doc, _QUAD, "quadrature")
    quad = _build("quadrature", QuadratureSpec, **quad_doc)

    step_doc = _table(doc, "step")
    _unknown(step_doc, _STEP, "step")
    step = _build("step", StepConfig, **step_doc)

    diag_doc = dict(_table(doc, "diagnostics"))
    _unknown(diag_doc, _DIAG, "diagnostics")
    for key in ("e_norms", "rho_norms"):
        if key in diag_doc:
            diag_doc[key] = tuple(_exponent(v, f"diagnostics.{key}") for v in diag_doc[key])
    if "casimirs" in diag_doc:
        diag_doc["casimirs"] = tuple(str(c) for c in diag_doc["casimirs"])
    diag = _build("diagnostics", DiagnosticsConfig, **diag_doc)

    track_doc = dict(_table(doc, "tracking"))
    _unknown(track_doc, _TRACK, "tracking")
    if "indices" in track_doc:
        track_doc["indices"] = tuple(int(i) for i in track_doc["indices"])
    tracking = _build("tracking", TrackingConfig, **track_doc)
    if tracking.per_axis < 0:
        raise ConfigError("tracking.per_axis must be >= 0")

    t_end = step.t_end
    fit_window = _window(doc.get("fit_window", ()), "fit_window", t_end)
    snaps = tuple(sorted(float(t) for t in doc.get("snapshot_times", ())))
    for t in snaps:
        if not 0.0 <= t <= t_end:
            raise ConfigError(f"snapshot_times: {t} lies outside [0, t_end = {t_end}]")
    hq = int(doc.get("history_quantiles", 1024))
    if hq < 2:
        raise ConfigError("history_quantiles must be >= 2")
    return RunConfig(model, profile, quad, step, diag, tracking, fit_window, snaps, hq,
                     str(doc.get("output", "run")))


def parse_config(text):
    """Parse TOML text into a validated ``RunConfig``."""
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from None
    return config_from_dict(doc)


def load_config(path):
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: syntax error: {exc}") from None
    return config_from_dict(doc)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, ModelTag):
        return value.value
    return value


def config_to_dict(cfg):
    prof = {"kind": cfg.profile.kind}
    prof.update({k: _plain(v) for k, v in asdict(cfg.profile).items()})
    doc = {
        "model": cfg.model.value,
        "output": cfg.output,
        "history_quantiles": cfg.history_quantiles,
        "profile": prof,
        "quadrature": asdict(cfg.quadrature),
        "step": asdict(cfg.step),
        "diagnostics": {k: _plain(v) for k, v in asdict(cfg.diagnostics).items()},
        "tracking": {k: _plain(v) for k, v in asdict(cfg.tracking).items()},
    }
    if cfg.fit_window:
        doc["fit_window"] = list(cfg.fit_window)
    if cfg.snapshot_times:
        doc["snapshot_times"] = list(cfg.snapshot_times)
    return doc


def emit_config(cfg):
    """TOML text that parses back to ``cfg``."""
    return tomli_w.dumps(config_to_dict(cfg))

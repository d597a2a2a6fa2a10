"""Reduced phase-space coordinates (r, w, ell) for spherically symmetric data."""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ModelTag(str, Enum):
    CLASSICAL = "classical"
    RELATIVISTIC = "relativistic"

    @classmethod
    def coerce(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown model {value!r}; expected 'classical' or 'relativistic'") from None


@dataclass(frozen=True)
class RadialPoint:
    """Radius ``r``, radial momentum ``w`` and squared angular momentum ``ell``."""

    r: float
    w: float
    ell: float

    def __post_init__(self):
        if self.r < 0:
            raise ValueError(f"r must be >= 0, got {self.r}")
        if self.ell < 0:
            raise ValueError(f"ell must be >= 0, got {self.ell}")

    def as_tuple(self):
        return (self.r, self.w, self.ell)


@dataclass(frozen=True)
class Particle:
    state: RadialPoint
    weight: float


@dataclass
class Ensemble:
    """Discrete distribution function stored as parallel arrays.

    Particle order is never changed by any operation, so row ``i`` of every
    snapshot refers to the same characteristic.
    """

    r: np.ndarray
    w: np.ndarray
    ell: np.ndarray
    weight: np.ndarray
    model: ModelTag = ModelTag.CLASSICAL
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r = np.ascontiguousarray(self.r, dtype=float)
        self.w = np.ascontiguousarray(self.w, dtype=float)
        self.ell = np.ascontiguousarray(self.ell, dtype=float)
        self.weight = np.ascontiguousarray(self.weight, dtype=float)
        self.model = ModelTag.coerce(self.model)
        n = self.r.shape[0]
        for name in ("w", "ell", "weight"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        if np.any(self.ell < 0):
            raise ValueError("ell must be nonnegative")
        if np.any(self.weight < 0):
            raise ValueError("weights must be nonnegative")

    def __len__(self):
        return self.r.shape[0]

    @property
    def particles(self):
        return [
            Particle(RadialPoint(float(r), float(w), float(l)), float(m))
            for r, w, l, m in zip(self.r, self.w, self.ell, self.weight)
        ]

    @classmethod
    def from_particles(cls, particles, model=ModelTag.CLASSICAL, time=0.0):
        arr = np.array([(p.state.r, p.state.w, p.state.ell, p.weight) for p in particles], dtype=float)
        arr = arr.reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], model=model, time=time)

    def copy(self):
        return Ensemble(
            self.r.copy(), self.w.copy(), self.ell.copy(), self.weight.copy(),
            model=self.model, time=self.time, meta=dict(self.meta),
        )

    def states(self):
        """(n, 3) array of (r, w, ell)."""
        return np.column_stack([self.r, self.w, self.ell])


def cartesian_to_radial(x, v):
    """Map a Cartesian position/velocity pair to ``RadialPoint``.

    ``w = x.v / |x|`` and ``ell = |x cross v|^2``; undefined at the origin.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.shape != (3,) or v.shape != (3,):
        raise ValueError("x and v must be 3-vectors")
    r = float(np.linalg.norm(x))
    if r == 0.0:
        raise ValueError("radial momentum is undefined at r = 0")
    w = float(np.dot(x, v)) / r
    cross = np.cross(x, v)
    return RadialPoint(r, w, float(np.dot(cross, cross)))


def speed_squared(p):
    """|v|^2 = w^2 + ell / r^2."""
    if p.r <= 0:
        raise ValueError("speed is undefined at r = 0")
    return p.w * p.w + p.ell / (p.r * p.r)


def lorentz_factor(r, w, ell):
    return np.sqrt(1.0 + w * w + ell / (r * r))

"""Time-varying multi-well potential on the plane.

V(t, x, y) = cos(s*atan2(y, x) - (pi/2)*t) + 10*(sqrt(x^2+y^2) - 1/2)

with an optional variant that squares the radial term. The angular phase
advances at rate (pi/2)/s radians per unit time, so the well pattern rotates
rigidly; the landscape repeats in time with period 4 and in angle with period
2*pi/s.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import OriginProximityError

# Angular coordinate is undefined at the origin; evaluation closer than this
# radius is an error (the simulator separately reflects at r = 1e-6).
R_MIN = 1e-9


@dataclass(frozen=True)
class SystemConfig:
    """Physical and numerical parameters of the rotating-well system."""

    s: int = 5
    beta: float = 10.0
    dt: float = 0.02
    total_time: float = 20.0
    n_traj: int = 2000
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    seed: int = 0
    radial_squared: bool = False

    def __post_init__(self):
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.total_time < self.dt:
            raise ValueError("total_time must be >= dt")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not self.domain_lo < self.domain_hi:
            raise ValueError("domain_lo must be < domain_hi")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "SystemConfig":
        return cls.from_dict(json.loads(text))


def _polar(p):
    """Split points of shape (..., 2) into (r, theta); error near the origin."""
    p = np.asarray(p, dtype=np.float64)
    x, y = p[..., 0], p[..., 1]
    r = np.hypot(x, y)
    if np.any(r < R_MIN):
        raise OriginProximityError(
            f"point within r < {R_MIN} of the origin: angle undefined"
        )
    return x, y, r, np.arctan2(y, x)


def potential_value(cfg: SystemConfig, t: float, p) -> np.ndarray | float:
    """Evaluate V(t, p) for p of shape (2,) or (n, 2)."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    _, _, r, theta = _polar(p)
    radial = r - 0.5
    if cfg.radial_squared:
        radial = radial**2
    value = np.cos(cfg.s * theta - 0.5 * math.pi * t) + 10.0 * radial
    return float(value) if value.ndim == 0 else value


def potential_gradient(cfg: SystemConfig, t: float, p) -> np.ndarray:
    """Analytic spatial gradient (dV/dx, dV/dy), shaped like p.

    Uses d(theta)/dx = -y/r^2 and d(theta)/dy = x/r^2, so the angular term
    contributes s*sin(arg)*(y, -x)/r^2; the radial term contributes
    g_r*(x, y)/r with g_r = 10 (linear) or 20*(r - 1/2) (squared variant).
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    x, y, r, theta = _polar(p)
    arg = cfg.s * theta - 0.5 * math.pi * t
    ang = cfg.s * np.sin(arg) / r**2
    g_r = 20.0 * (r - 0.5) if cfg.radial_squared else 10.0
    gx = ang * y + g_r * x / r
    gy = -ang * x + g_r * y / r
    return np.stack([gx, gy], axis=-1)


def frozen_potential(cfg: SystemConfig, t_freeze: float):
    """Return a time-independent callable p -> V(t_freeze, p)."""
    if t_freeze < 0:
        raise ValueError(f"t_freeze must be >= 0, got {t_freeze}")

    def frozen(p):
        return potential_value(cfg, t_freeze, p)

    return frozen


def frozen_gradient(cfg: SystemConfig, t_freeze: float):
    """Companion to frozen_potential: callable (t, p) -> grad V(t_freeze, p).

    Accepts and ignores a time argument so it can drive the simulator.
    """
    if t_freeze < 0:
        raise ValueError(f"t_freeze must be >= 0, got {t_freeze}")

    def frozen(_t, p):
        return potential_gradient(cfg, t_freeze, p)

    return frozen

"""Virtual mechanical elements: goal springs, moving-goal filters, Gaussian
avoidance springs and unilateral saturating dampers.

All evaluators are pure functions from kinematic inputs to forces. Sign
convention for Gaussian springs: negative stiffness encodes repulsion (the
force pushes the attached point away from the obstacle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vec import Vec3, as_vec, clamp_magnitude, norm

E_HALF = math.exp(0.5)


class ParameterError(ValueError):
    """A component spec was built with out-of-range parameters."""


class DegenerateGeometryError(ValueError):
    """Direction is undefined (coincident anchor points)."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class GoalSpringSpec:
    """Linear spring-damper toward a (possibly moving) target, force capped."""

    stiffness: float          # N/m
    damping: float            # N*s/m
    force_cap: float          # N, magnitude bound on the emitted force

    def __post_init__(self):
        _require(self.stiffness > 0, "goal spring stiffness must be > 0")
        _require(self.damping >= 0, "goal spring damping must be >= 0")
        _require(self.force_cap > 0, "goal spring force_cap must be > 0")


@dataclass(frozen=True)
class TimeLawFilter:
    """Linear time law sliding the spring anchor from start to goal at
    constant speed, then holding at the goal."""

    start_position: Vec3
    goal_position: Vec3
    speed: float              # m/s
    start_time: float         # s

    def __post_init__(self):
        _require(self.speed > 0, "filter speed must be > 0")
        object.__setattr__(self, "start_position", as_vec(self.start_position))
        object.__setattr__(self, "goal_position", as_vec(self.goal_position))

    @property
    def distance(self) -> float:
        return norm(self.goal_position - self.start_position)

    @property
    def duration(self) -> float:
        return self.distance / self.speed


def sigma_from_k_fmax(k: float, f_max: float) -> float:
    """Width at which a Gaussian spring of stiffness k peaks at force f_max."""
    if not (math.isfinite(k) and math.isfinite(f_max)) or k == 0 or f_max == 0:
        raise ParameterError("k and f_max must be nonzero and finite")
    return f_max * E_HALF / k


def k_from_sigma_fmax(sigma: float, f_max: float) -> float:
    """Stiffness of a Gaussian spring peaking at force f_max at distance sigma."""
    if not (math.isfinite(sigma) and math.isfinite(f_max)) or sigma == 0 or f_max == 0:
        raise ParameterError("sigma and f_max must be nonzero and finite")
    return f_max * E_HALF / sigma


@dataclass(frozen=True)
class GaussianSpringSpec:
    """Spring with Gaussian energy profile; any two of (k, sigma, f_max)
    determine the third via sigma = f_max * e^0.5 / k."""

    stiffness: float          # N/m, negative for repulsion
    width: float              # sigma, m
    max_force: float          # N, signed like stiffness

    def __post_init__(self):
        _require(self.stiffness != 0, "gaussian spring stiffness must be nonzero")
        _require(self.width > 0, "gaussian spring width must be > 0")
        sigma = sigma_from_k_fmax(self.stiffness, self.max_force)
        _require(abs(sigma - self.width) <= 1e-9 * abs(self.width),
                 "inconsistent (k, sigma, f_max) triple")

    @classmethod
    def from_k_fmax(cls, k: float, f_max: float) -> "GaussianSpringSpec":
        return cls(stiffness=k, width=sigma_from_k_fmax(k, f_max), max_force=f_max)

    @classmethod
    def from_sigma_fmax(cls, sigma: float, f_max: float) -> "GaussianSpringSpec":
        return cls(stiffness=k_from_sigma_fmax(sigma, f_max), width=sigma,
                   max_force=f_max)

    @classmethod
    def from_k_sigma(cls, k: float, sigma: float) -> "GaussianSpringSpec":
        return cls(stiffness=k, width=sigma, max_force=k * sigma / E_HALF)

    @property
    def peak_magnitude(self) -> float:
        """|k| * sigma * e^{-1/2}, attained exactly at separation sigma."""
        return abs(self.stiffness) * self.width * math.exp(-0.5)


@dataclass(frozen=True)
class UnilateralDamperSpec:
    """Damper active only on approaching motion within radius R, with damping
    decaying linearly from c0 at contact to zero at R, force capped."""

    base_damping: float       # c0, N*s/m
    activation_radius: float  # R, m
    force_cap: float          # N

    def __post_init__(self):
        _require(self.base_damping > 0, "damper base_damping must be > 0")
        _require(self.activation_radius > 0, "damper activation_radius must be > 0")
        _require(self.force_cap > 0, "damper force_cap must be > 0")


def goal_spring_force(x_ee: Vec3, v_ee: Vec3, x_target: Vec3, v_target: Vec3,
                      spec: GoalSpringSpec) -> Vec3:
    """Capped spring-damper force pulling the end-effector toward the target."""
    f = spec.stiffness * (x_target - x_ee) + spec.damping * (v_target - v_ee)
    return clamp_magnitude(f, spec.force_cap)


def filtered_goal_position(filt: TimeLawFilter, t: float) -> Vec3:
    """Anchor position under the linear time law; holds at the goal once
    reached. Coincident start and goal return the goal for all t."""
    d = filt.distance
    if d == 0.0:
        return filt.goal_position.copy()
    s = min(1.0, filt.speed * (t - filt.start_time) / d)
    s = max(0.0, s)
    return filt.start_position + s * (filt.goal_position - filt.start_position)


def filtered_goal_velocity(filt: TimeLawFilter, t: float) -> Vec3:
    """Anchor velocity: constant speed along the segment while sliding, zero
    once the goal is reached."""
    d = filt.distance
    if d == 0.0:
        return np.zeros(3)
    dt = t - filt.start_time
    if dt < 0 or dt >= filt.duration:
        return np.zeros(3)
    return (filt.goal_position - filt.start_position) * (filt.speed / d)


def gaussian_energy(x: Vec3, spec: GaussianSpringSpec) -> float:
    """E(x) = -k sigma^2 exp(-||x||^2 / 2 sigma^2)."""
    s2 = spec.width * spec.width
    return -spec.stiffness * s2 * math.exp(-float(np.dot(x, x)) / (2.0 * s2))


def gaussian_avoidance_force(x_self: Vec3, x_obj: Vec3,
                             spec: GaussianSpringSpec) -> Vec3:
    """Force on the self point: k * (x_obj - x_self) * exp(-r^2 / 2 sigma^2).

    With k < 0 this points away from the obstacle. Magnitude peaks at
    separation sigma with value spec.peak_magnitude.
    """
    x = x_obj - x_self
    s2 = spec.width * spec.width
    w = math.exp(-float(np.dot(x, x)) / (2.0 * s2))
    return spec.stiffness * w * x


def unilateral_damper_force(x_ee: Vec3, v_ee: Vec3, x_hand: Vec3, v_hand: Vec3,
                            spec: UnilateralDamperSpec) -> Vec3:
    """Braking force on the end-effector, pushing it away from the hand.

    Active only when the hand and end-effector approach each other
    (radial rate < 0) within the activation radius. Raises
    DegenerateGeometryError on coincident positions; the caller keeps the
    previous direction in that case.
    """
    d = x_hand - x_ee
    dist = norm(d)
    if dist == 0.0:
        raise DegenerateGeometryError("hand and end-effector coincide")
    if dist >= spec.activation_radius:
        return np.zeros(3)
    d_hat = d / dist
    r_dot = float(np.dot(d_hat, v_hand - v_ee))
    if r_dot >= 0.0:
        return np.zeros(3)
    c = spec.base_damping * (1.0 - dist / spec.activation_radius)
    magnitude = min(-c * r_dot, spec.force_cap)
    return -magnitude * d_hat

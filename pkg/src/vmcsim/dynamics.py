"""Agent motion under aggregated virtual-component forces.

Each agent is a task-space point mass with a reach-sphere constraint and a
sampled base-to-end-effector body segment (12 points). Robot-robot avoidance
attaches a Gaussian spring between every body-point pair of different robots.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .components import (
    DegenerateGeometryError,
    GaussianSpringSpec,
    GoalSpringSpec,
    TimeLawFilter,
    UnilateralDamperSpec,
    filtered_goal_position,
    filtered_goal_velocity,
    gaussian_avoidance_force,
    goal_spring_force,
    unilateral_damper_force,
)
from .vec import Vec3, as_vec, norm

BODY_POINT_COUNT = 12


class SimulationFault(RuntimeError):
    """Non-finite force or state; the simulation halts with a diagnostic."""


class AttachmentError(ValueError):
    """An attachment references a missing entity (raised at attach time)."""


@dataclass(frozen=True)
class AgentId:
    index: int
    kind: str = "robot"  # "robot" | "human"


@dataclass
class AgentState:
    position: Vec3
    velocity: Vec3
    virtual_mass: float
    base_position: Vec3
    reach_radius: float
    grasped_block: Optional[int] = None
    body_points: np.ndarray = None  # (12, 3)

    def __post_init__(self):
        self.position = as_vec(self.position)
        self.velocity = as_vec(self.velocity)
        self.base_position = as_vec(self.base_position)
        if self.virtual_mass <= 0:
            raise ValueError("virtual_mass must be > 0")
        if self.body_points is None:
            self.body_points = body_points_of(self.base_position, self.position)

    @property
    def speed(self) -> float:
        return norm(self.velocity)


def body_points_of(base: Vec3, ee: Vec3) -> np.ndarray:
    """12 points evenly spaced (inclusive) on the segment base -> ee."""
    s = np.linspace(0.0, 1.0, BODY_POINT_COUNT)[:, None]
    return np.asarray(base, dtype=float) + s * (np.asarray(ee, dtype=float) - base)


@dataclass
class ComponentAttachment:
    """A virtual component attached between an agent anchor and some other
    entity. anchor_self is a body-point index or None for the end-effector."""

    owner: int
    key: str
    kind: str              # "goal" | "gaussian" | "damper" | "table"
    spec: object
    anchor_self: Optional[int] = None
    anchor_other: tuple = ()
    enabled: bool = True
    filter: Optional[TimeLawFilter] = None   # goal attachments only


@dataclass
class HandView:
    points: np.ndarray       # (n, 3)
    velocities: np.ndarray   # (n, 3)


@dataclass
class WorldSnapshot:
    """Read-only view of the world handed to controllers and force evaluation."""

    t: float
    agents: dict
    hands: dict = field(default_factory=dict)
    table_z: float = 0.0
    block_size: float = 0.03


@dataclass
class ForceBreakdown:
    per_component: list       # [(attachment key, force Vec3), ...]
    net: Vec3

    @property
    def total_magnitude(self) -> float:
        return float(sum(norm(f) for _, f in self.per_component))


def _resolve_point(world: WorldSnapshot, ref: tuple) -> tuple[Vec3, Vec3]:
    """Resolve an anchor_other reference to (position, velocity)."""
    if ref[0] == "agent":
        _, idx, point = ref
        other = world.agents[idx]
        if point is None:
            return other.position, other.velocity
        return other.body_points[point], other.velocity
    if ref[0] == "hand":
        _, hand_id, kp = ref
        hand = world.hands[hand_id]
        return hand.points[kp], hand.velocities[kp]
    raise AttachmentError(f"unresolvable anchor reference {ref!r}")


def validate_attachments(attachments: list[ComponentAttachment],
                         world: WorldSnapshot) -> None:
    """Fail fast on dangling references so stepping never has to."""
    for att in attachments:
        if att.owner not in world.agents:
            raise AttachmentError(f"{att.key}: owner {att.owner} not in world")
        if att.anchor_self is not None and not (
                0 <= att.anchor_self < BODY_POINT_COUNT):
            raise AttachmentError(f"{att.key}: bad body point {att.anchor_self}")
        if att.kind in ("gaussian", "damper") and att.anchor_other:
            kind = att.anchor_other[0]
            if kind == "agent" and att.anchor_other[1] not in world.agents:
                raise AttachmentError(f"{att.key}: missing agent "
                                      f"{att.anchor_other[1]}")
            if kind == "hand" and att.anchor_other[1] not in world.hands:
                raise AttachmentError(f"{att.key}: missing hand "
                                      f"{att.anchor_other[1]}")


def aggregate_forces(agent: AgentState, attachments: list[ComponentAttachment],
                     world: WorldSnapshot, t: float) -> ForceBreakdown:
    """Evaluate every enabled attachment; disabled ones contribute nothing."""
    per = []
    net = np.zeros(3)
    for att in attachments:
        if not att.enabled:
            continue
        if att.anchor_self is None:
            x_self, v_self = agent.position, agent.velocity
        else:
            x_self, v_self = agent.body_points[att.anchor_self], agent.velocity
        if att.kind == "goal":
            x_t = filtered_goal_position(att.filter, t)
            v_t = filtered_goal_velocity(att.filter, t)
            f = goal_spring_force(x_self, v_self, x_t, v_t, att.spec)
        elif att.kind == "gaussian":
            x_obj, _ = _resolve_point(world, att.anchor_other)
            f = gaussian_avoidance_force(x_self, x_obj, att.spec)
        elif att.kind == "table":
            z = world.table_z
            if agent.grasped_block is not None:
                z += world.block_size
            x_obj = np.array([x_self[0], x_self[1], z])
            f = gaussian_avoidance_force(x_self, x_obj, att.spec)
        elif att.kind == "damper":
            x_obj, v_obj = _resolve_point(world, att.anchor_other)
            try:
                f = unilateral_damper_force(x_self, v_self, x_obj, v_obj, att.spec)
            except DegenerateGeometryError:
                f = np.zeros(3)
        else:
            raise AttachmentError(f"unknown attachment kind {att.kind!r}")
        per.append((att.key, f))
        net = net + f
    return ForceBreakdown(per_component=per, net=net)


def step_agent(agent: AgentState, net_force: Vec3, dt: float,
               viscous_damping: float = 0.0) -> AgentState:
    """Semi-implicit Euler step with reach-sphere projection.

    Mutates and returns the agent. viscous_damping is the floor damping
    coefficient mu (1/s) applied as an acceleration -mu*v.
    """
    if not np.isfinite(net_force).all():
        raise SimulationFault(f"non-finite force {net_force!r}")
    v = agent.velocity + (net_force / agent.virtual_mass
                          - viscous_damping * agent.velocity) * dt
    x = agent.position + v * dt
    rel = x - agent.base_position
    dist = norm(rel)
    if dist > agent.reach_radius:
        outward = rel / dist
        x = agent.base_position + agent.reach_radius * outward
        radial = float(np.dot(v, outward))
        if radial > 0.0:
            v = v - radial * outward
    agent.position = x
    agent.velocity = v
    agent.body_points = body_points_of(agent.base_position, x)
    return agent


def attach_standard_avoidance(robots: list[int],
                              spec: GaussianSpringSpec) -> list[ComponentAttachment]:
    """Avoidance springs between every body-point pair of different robots.

    Returns one attachment per ordered (owner, peer, self point, peer point),
    i.e. 144 per direction for each robot pair.
    """
    out = []
    for i in robots:
        for j in robots:
            if i == j:
                continue
            for p in range(BODY_POINT_COUNT):
                for q in range(BODY_POINT_COUNT):
                    out.append(ComponentAttachment(
                        owner=i, key=f"avoid:{i}:{j}:{p}:{q}", kind="gaussian",
                        spec=spec, anchor_self=p, anchor_other=("agent", j, q)))
    return out


def pair_avoidance_forces(points_self: np.ndarray, points_other: np.ndarray,
                          spec: GaussianSpringSpec) -> tuple[Vec3, float]:
    """Vectorized sum of Gaussian springs between all point pairs.

    Returns (net force on the self body, sum of individual force magnitudes).
    Equivalent to evaluating the 12x12 individual attachments.
    """
    diff = points_other[None, :, :] - points_self[:, None, :]
    r2 = np.einsum("ijk,ijk->ij", diff, diff)
    w = np.exp(-r2 / (2.0 * spec.width * spec.width)) * spec.stiffness
    net = np.einsum("ij,ijk->k", w, diff)
    tot = float(np.sum(np.abs(w) * np.sqrt(r2)))
    return net, tot

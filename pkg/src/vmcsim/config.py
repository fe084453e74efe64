"""Run configuration: validation, canonical serialization, shipped presets."""

from __future__ import annotations

import copy
import importlib.resources
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .components import GaussianSpringSpec, GoalSpringSpec, UnilateralDamperSpec


class ConfigError(ValueError):
    """Validation failure, carrying the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _num(d: dict, key: str, path: str, default=None, minimum=None,
         maximum=None, required=False):
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}", "required field missing")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}, got {v}")
    if maximum is not None and v > maximum:
        raise ConfigError(f"{path}.{key}", f"must be <= {maximum}, got {v}")
    return float(v)


def _reject_unknown(d: dict, known: set, path: str) -> None:
    for k in d:
        if k not in known:
            raise ConfigError(f"{path}.{k}", "unknown field")


@dataclass
class GaussianParams:
    """Exactly two of (stiffness, sigma, f_max)."""

    stiffness: Optional[float] = None
    sigma: Optional[float] = None
    f_max: Optional[float] = None

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "GaussianParams":
        _reject_unknown(d, {"stiffness", "sigma", "f_max"}, path)
        p = cls(stiffness=_num(d, "stiffness", path),
                sigma=_num(d, "sigma", path, minimum=0.0),
                f_max=_num(d, "f_max", path))
        given = sum(v is not None for v in (p.stiffness, p.sigma, p.f_max))
        if given != 2:
            raise ConfigError(path, "give exactly two of stiffness, sigma, f_max")
        p.to_spec()  # validate now
        return p

    def to_spec(self) -> GaussianSpringSpec:
        if self.stiffness is not None and self.f_max is not None:
            return GaussianSpringSpec.from_k_fmax(self.stiffness, self.f_max)
        if self.sigma is not None and self.f_max is not None:
            return GaussianSpringSpec.from_sigma_fmax(self.sigma, self.f_max)
        return GaussianSpringSpec.from_k_sigma(self.stiffness, self.sigma)

    def to_dict(self) -> dict:
        return {k: v for k, v in (("stiffness", self.stiffness),
                                  ("sigma", self.sigma),
                                  ("f_max", self.f_max)) if v is not None}


@dataclass
class GoalParams:
    stiffness: float
    f_max: float
    damping: Optional[float] = None   # None -> critical for the virtual mass

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "GoalParams":
        _reject_unknown(d, {"stiffness", "f_max", "damping"}, path)
        return cls(
            stiffness=_num(d, "stiffness", path, required=True, minimum=1e-9),
            f_max=_num(d, "f_max", path, required=True, minimum=1e-9),
            damping=_num(d, "damping", path, minimum=0.0))

    def to_spec(self, virtual_mass: float) -> GoalSpringSpec:
        c = self.damping
        if c is None:
            c = 2.0 * (self.stiffness * virtual_mass) ** 0.5
        return GoalSpringSpec(stiffness=self.stiffness, damping=c,
                              force_cap=self.f_max)

    def to_dict(self) -> dict:
        out = {"stiffness": self.stiffness, "f_max": self.f_max}
        if self.damping is not None:
            out["damping"] = self.damping
        return out


@dataclass
class DamperParams:
    c0: float = 150.0
    radius: float = 0.5
    f_max: float = 50.0
    enabled: bool = False

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "DamperParams":
        _reject_unknown(d, {"c0", "radius", "f_max", "enabled"}, path)
        return cls(c0=_num(d, "c0", path, default=150.0, minimum=1e-9),
                   radius=_num(d, "radius", path, default=0.5, minimum=1e-9),
                   f_max=_num(d, "f_max", path, default=50.0, minimum=1e-9),
                   enabled=bool(d.get("enabled", False)))

    def to_spec(self) -> UnilateralDamperSpec:
        return UnilateralDamperSpec(base_damping=self.c0,
                                    activation_radius=self.radius,
                                    force_cap=self.f_max)

    def to_dict(self) -> dict:
        return {"c0": self.c0, "radius": self.radius, "f_max": self.f_max,
                "enabled": self.enabled}


@dataclass
class RobotParams:
    goal: GoalParams
    filter_speed: float = 0.4
    robot_avoid: Optional[GaussianParams] = None
    hand_avoid: Optional[GaussianParams] = None
    damper: Optional[DamperParams] = None
    role: str = "task"            # "task" | "hold"

    @classmethod
    def from_dict(cls, d: dict, path: str) -> "RobotParams":
        _reject_unknown(d, {"goal", "filter_speed", "robot_avoid",
                            "hand_avoid", "damper", "role"}, path)
        if "goal" not in d:
            raise ConfigError(f"{path}.goal", "required field missing")
        role = d.get("role", "task")
        if role not in ("task", "hold"):
            raise ConfigError(f"{path}.role", f"must be task or hold, got {role!r}")
        return cls(
            goal=GoalParams.from_dict(d["goal"], f"{path}.goal"),
            filter_speed=_num(d, "filter_speed", path, default=0.4, minimum=1e-9),
            robot_avoid=(GaussianParams.from_dict(d["robot_avoid"],
                                                  f"{path}.robot_avoid")
                         if d.get("robot_avoid") else None),
            hand_avoid=(GaussianParams.from_dict(d["hand_avoid"],
                                                 f"{path}.hand_avoid")
                        if d.get("hand_avoid") else None),
            damper=(DamperParams.from_dict(d["damper"], f"{path}.damper")
                    if d.get("damper") else None),
            role=role)

    def to_dict(self) -> dict:
        out = {"goal": self.goal.to_dict(), "filter_speed": self.filter_speed,
               "role": self.role}
        if self.robot_avoid:
            out["robot_avoid"] = self.robot_avoid.to_dict()
        if self.hand_avoid:
            out["hand_avoid"] = self.hand_avoid.to_dict()
        if self.damper:
            out["damper"] = self.damper.to_dict()
        return out


_SCENARIOS = ("A", "B", "mixed_checkerboard", "crossing")

_TOP_FIELDS = {
    "scenario", "n_robots", "seed", "dt", "duration_cap", "negotiation",
    "robots", "stall_threshold", "stall_dwell", "progress_floor", "alpha",
    "rule_ii_proximity", "virtual_mass", "viscous_damping", "table_avoid",
    "hand_script", "hand_keypoints", "trace_every", "message_delay_steps",
    "message_drop_rate", "hold_position", "stall_components",
}


@dataclass
class RunConfig:
    scenario: str = "A"
    n_robots: int = 2
    seed: int = 0
    dt: float = 0.004
    duration_cap: float = 300.0
    negotiation: bool = True
    robots: list[RobotParams] = field(default_factory=list)
    stall_threshold: float = 4.0
    stall_dwell: float = 0.5
    progress_floor: float = 0.01
    alpha: float = 1.0
    rule_ii_proximity: float = 0.15
    virtual_mass: float = 5.0
    viscous_damping: float = 5.0
    table_avoid: GaussianParams = field(
        default_factory=lambda: GaussianParams(sigma=0.01, f_max=-20.0))
    hand_script: Optional[dict] = None
    hand_keypoints: int = 1
    trace_every: int = 5
    message_delay_steps: int = 1
    message_drop_rate: float = 0.0
    hold_position: tuple = (0.0, 0.0, 0.15)
    stall_components: str = "all"   # "all" | "springs"

    @classmethod
    def from_dict(cls, d: dict, path: str = "config") -> "RunConfig":
        _reject_unknown(d, _TOP_FIELDS, path)
        scenario = d.get("scenario", "A")
        if scenario not in _SCENARIOS:
            raise ConfigError(f"{path}.scenario",
                              f"must be one of {_SCENARIOS}, got {scenario!r}")
        n_robots = d.get("n_robots", 2)
        if not isinstance(n_robots, int) or not 1 <= n_robots <= 4:
            raise ConfigError(f"{path}.n_robots", f"must be 1..4, got {n_robots!r}")
        robots_raw = d.get("robots")
        if robots_raw is None:
            raise ConfigError(f"{path}.robots", "required field missing")
        if isinstance(robots_raw, dict):
            shared = RobotParams.from_dict(robots_raw, f"{path}.robots")
            robots = [copy.deepcopy(shared) for _ in range(n_robots)]
        else:
            robots = [RobotParams.from_dict(r, f"{path}.robots[{i}]")
                      for i, r in enumerate(robots_raw)]
            if len(robots) != n_robots:
                raise ConfigError(f"{path}.robots",
                                  f"expected {n_robots} entries, got {len(robots)}")
        stall_components = d.get("stall_components", "all")
        if stall_components not in ("all", "springs"):
            raise ConfigError(f"{path}.stall_components",
                              "must be 'all' or 'springs'")
        hold = d.get("hold_position", (0.0, 0.0, 0.15))
        return cls(
            scenario=scenario, n_robots=n_robots,
            seed=int(d.get("seed", 0)),
            dt=_num(d, "dt", path, default=0.004, minimum=1e-5, maximum=0.05),
            duration_cap=_num(d, "duration_cap", path, default=300.0, minimum=0.0),
            negotiation=bool(d.get("negotiation", True)),
            robots=robots,
            stall_threshold=_num(d, "stall_threshold", path, default=4.0,
                                 minimum=0.0),
            stall_dwell=_num(d, "stall_dwell", path, default=0.5, minimum=0.0),
            progress_floor=_num(d, "progress_floor", path, default=0.01,
                                minimum=0.0),
            alpha=_num(d, "alpha", path, default=1.0, minimum=1e-9),
            rule_ii_proximity=_num(d, "rule_ii_proximity", path, default=0.15,
                                   minimum=0.0),
            virtual_mass=_num(d, "virtual_mass", path, default=5.0, minimum=1e-9),
            viscous_damping=_num(d, "viscous_damping", path, default=5.0,
                                 minimum=0.0),
            table_avoid=(GaussianParams.from_dict(d["table_avoid"],
                                                  f"{path}.table_avoid")
                         if d.get("table_avoid")
                         else GaussianParams(sigma=0.01, f_max=-20.0)),
            hand_script=d.get("hand_script"),
            hand_keypoints=int(d.get("hand_keypoints", 1)),
            trace_every=max(1, int(d.get("trace_every", 5))),
            message_delay_steps=max(1, int(d.get("message_delay_steps", 1))),
            message_drop_rate=_num(d, "message_drop_rate", path, default=0.0,
                                   minimum=0.0, maximum=1.0),
            hold_position=tuple(hold),
            stall_components=stall_components)

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario, "n_robots": self.n_robots,
            "seed": self.seed, "dt": self.dt,
            "duration_cap": self.duration_cap, "negotiation": self.negotiation,
            "robots": [r.to_dict() for r in self.robots],
            "stall_threshold": self.stall_threshold,
            "stall_dwell": self.stall_dwell,
            "progress_floor": self.progress_floor, "alpha": self.alpha,
            "rule_ii_proximity": self.rule_ii_proximity,
            "virtual_mass": self.virtual_mass,
            "viscous_damping": self.viscous_damping,
            "table_avoid": self.table_avoid.to_dict(),
            "hand_keypoints": self.hand_keypoints,
            "trace_every": self.trace_every,
            "message_delay_steps": self.message_delay_steps,
            "message_drop_rate": self.message_drop_rate,
            "hold_position": list(self.hold_position),
            "stall_components": self.stall_components,
        }
        if self.hand_script is not None:
            out["hand_script"] = self.hand_script
        return out


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a mapping")
    return RunConfig.from_dict(data)


def preset_names() -> list[str]:
    root = importlib.resources.files("vmcsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_preset(name: str, overrides: Optional[dict] = None) -> RunConfig:
    root = importlib.resources.files("vmcsim") / "presets"
    path = root / f"{name}.yaml"
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError("preset", f"unknown preset {name!r}; "
                          f"available: {', '.join(preset_names())}")
    data = yaml.safe_load(text)
    if overrides:
        data.update(overrides)
    return RunConfig.from_dict(data)

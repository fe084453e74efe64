"""Deterministic experiment runner: one fixed-timestep loop stepping agent
dynamics, per-robot controllers (stall detection + negotiation) and task
state machines, while emitting the trace."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analysis
from .components import (
    DegenerateGeometryError,
    TimeLawFilter,
    filtered_goal_position,
    filtered_goal_velocity,
    gaussian_avoidance_force,
    goal_spring_force,
    unilateral_damper_force,
)
from .config import RunConfig
from .coordination import (
    MessageTransport,
    NegotiationMessage,
    Negotiator,
    StallDetector,
)
from .dynamics import AgentState, SimulationFault, pair_avoidance_forces, step_agent
from .scenario import (
    HAND_RATE,
    ApproachRetreatScript,
    HandSource,
    Layout,
    PickPlaceStateMachine,
    RecordedHandSource,
    ScriptedHandSource,
    TaskBoard,
    build_layout,
    next_cell,
)
from .trace import config_hash
from .vec import Vec3, norm, vec

HAND_VELOCITY_TAU = 0.1       # s, exponential smoothing of hand velocity
HUMAN_PLACE_INTERVAL = 10.0   # s, scripted human cadence in mixed runs
RELEASE_TOLERANCE = 0.01      # m

# rigid keypoint cluster offsets used when a single-point hand is fanned out
_KEYPOINT_OFFSETS = np.array([
    [0.0, 0.0, 0.0], [0.02, 0.0, 0.0], [-0.02, 0.0, 0.0],
    [0.0, 0.02, 0.0], [0.0, -0.02, 0.0], [0.0, 0.0, 0.02],
])


@dataclass
class RobotRuntime:
    index: int
    role: str
    agent: AgentState
    goal_spec: object
    filter_speed: float
    robot_avoid_spec: Optional[object]
    hand_avoid_spec: Optional[object]
    damper_spec: Optional[object]
    sm: Optional[PickPlaceStateMachine]
    detector: StallDetector
    negotiator: Optional[Negotiator]
    waypoint: Optional[Vec3] = None
    filter: Optional[TimeLawFilter] = None
    rho: float = 0.0
    f_net: np.ndarray = field(default_factory=lambda: np.zeros(3))
    stalled: bool = False
    was_stalled: bool = False
    was_suspended: bool = False
    damper_prev: np.ndarray = field(default_factory=lambda: np.zeros(3))
    forces: dict = field(default_factory=dict)


@dataclass
class HandRuntime:
    source: HandSource
    points: Optional[np.ndarray] = None       # held sample
    velocities: Optional[np.ndarray] = None


@dataclass
class RunResult:
    records: list
    metrics: analysis.MetricsRecord
    status: str
    layout: Layout


def _build_hand_sources(config: RunConfig) -> dict[int, HandSource]:
    if config.hand_script is None:
        return {}
    script = dict(config.hand_script)
    kind = script.pop("kind", None)
    if kind == "approach_retreat":
        return {0: ScriptedHandSource(ApproachRetreatScript(
            start=vec(*script.get("start", (0.5, 0.25, 0.15))),
            deep=vec(*script.get("deep", (0.06, 0.02, 0.15))),
            speed=float(script.get("speed", 0.8)),
            dwell=float(script.get("dwell", 1.0)),
            rest=float(script.get("rest", 1.0)),
            entries=int(script.get("entries", 4))))}
    raise ValueError(f"unknown hand script kind {kind!r}")


class Simulation:
    """One deterministic run. Identical config and seed produce identical
    trace byte streams."""

    def __init__(self, config: RunConfig,
                 hand_sources: Optional[dict[int, HandSource]] = None):
        self.config = config
        self.dt = config.dt
        self.layout = build_layout(config.n_robots, config.scenario,
                                   config.seed)
        self.board = TaskBoard(self.layout, config.seed)
        self.table_spec = config.table_avoid.to_spec()
        self.hands: dict[int, HandRuntime] = {}
        sources = hand_sources if hand_sources is not None \
            else _build_hand_sources(config)
        for hid, src in sources.items():
            self.hands[hid] = HandRuntime(source=src)
        self.hand_stride = max(1, round(1.0 / (HAND_RATE * self.dt)))

        robot_ids = list(range(config.n_robots))
        self.transport = MessageTransport(
            robot_ids, delay_steps=config.message_delay_steps,
            drop_rate=config.message_drop_rate, seed=config.seed) \
            if config.negotiation else None

        self.robots: list[RobotRuntime] = []
        for r in robot_ids:
            params = config.robots[r]
            base = self.layout.robot_bases[r]
            start = self.layout.rest_positions[r].copy()
            agent = AgentState(position=start, velocity=np.zeros(3),
                               virtual_mass=config.virtual_mass,
                               base_position=base,
                               reach_radius=self.layout.reach_radius)
            sm = None
            if params.role == "task":
                sm = PickPlaceStateMachine(r, self.board,
                                           self.layout.rest_positions[r])
            neg = None
            if config.negotiation:
                neg = Negotiator(r, config.n_robots, config.alpha,
                                 config.seed,
                                 proximity_threshold=config.rule_ii_proximity)
            rt = RobotRuntime(
                index=r, role=params.role, agent=agent,
                goal_spec=params.goal.to_spec(config.virtual_mass),
                filter_speed=params.filter_speed,
                robot_avoid_spec=(params.robot_avoid.to_spec()
                                  if params.robot_avoid else None),
                hand_avoid_spec=(params.hand_avoid.to_spec()
                                 if params.hand_avoid else None),
                damper_spec=(params.damper.to_spec()
                             if params.damper and params.damper.enabled
                             else None),
                sm=sm,
                detector=StallDetector(config.stall_threshold,
                                       config.stall_dwell,
                                       config.progress_floor),
                negotiator=neg)
            if params.role == "hold":
                self._set_waypoint(rt, vec(*config.hold_position), t=0.0)
            self.robots.append(rt)

        self.step_idx = 0
        self.records: list[dict] = []
        self.status = "running"
        self._recorded_grant_rounds: set[int] = set()
        self._human_place_cursor = 0
        header = {"type": "header", "schema": 1, "seed": config.seed,
                  "config": config.to_dict(),
                  "config_hash": config_hash(config.to_dict()),
                  "layout": self.layout.to_dict()}
        self.records.append(header)

    # -- helpers -----------------------------------------------------------

    @property
    def t(self) -> float:
        return self.step_idx * self.dt

    def _set_waypoint(self, rt: RobotRuntime, waypoint: Vec3, t: float) -> None:
        rt.waypoint = waypoint
        rt.filter = TimeLawFilter(start_position=rt.agent.position.copy(),
                                  goal_position=waypoint.copy(),
                                  speed=rt.filter_speed, start_time=t)

    def _event(self, kind: str, **fields) -> None:
        rec = {"type": "event", "t": round(self.t, 9), "kind": kind}
        rec.update(fields)
        self.records.append(rec)

    def _holder(self, rt: RobotRuntime) -> Optional[int]:
        return rt.negotiator.priority.holder if rt.negotiator else None

    def _suspended(self, rt: RobotRuntime) -> bool:
        h = self._holder(rt)
        return h is not None and h != rt.index

    def _sample_hands(self) -> None:
        t = self.t
        for hid in sorted(self.hands):
            hr = self.hands[hid]
            pts = hr.source.sample(t, self)
            if pts is not None:
                pts = np.asarray(pts, dtype=float)
                if pts.ndim == 1:
                    pts = pts[None, :]
                if self.config.hand_keypoints > 1 and len(pts) == 1:
                    k = min(self.config.hand_keypoints, len(_KEYPOINT_OFFSETS))
                    pts = pts[0][None, :] + _KEYPOINT_OFFSETS[:k]
            if pts is None:
                hr.points = None
                hr.velocities = None
            else:
                lam = 1.0 - math.exp(-(1.0 / HAND_RATE) / HAND_VELOCITY_TAU)
                if (hr.points is not None
                        and hr.points.shape == pts.shape):
                    raw = (pts - hr.points) * HAND_RATE
                    hr.velocities = (1 - lam) * hr.velocities + lam * raw
                else:
                    hr.velocities = np.zeros_like(pts)
                hr.points = pts
            self._event("hand_sample", hand=hid,
                        points=None if pts is None else
                        [[float(v) for v in p] for p in pts])

    def _compute_forces(self) -> None:
        t = self.t
        springs_only = self.config.stall_components == "springs"
        for rt in self.robots:
            agent = rt.agent
            f_goal = np.zeros(3)
            goal_on = rt.filter is not None and not self._suspended(rt)
            if goal_on:
                x_t = filtered_goal_position(rt.filter, t)
                v_t = filtered_goal_velocity(rt.filter, t)
                f_goal = goal_spring_force(agent.position, agent.velocity,
                                           x_t, v_t, rt.goal_spec)
            avoid_net = np.zeros(3)
            avoid_tot = 0.0
            avoid_on = (rt.robot_avoid_spec is not None
                        and self._holder(rt) != rt.index)
            if avoid_on:
                for peer in self.robots:
                    if peer.index == rt.index:
                        continue
                    net, tot = pair_avoidance_forces(
                        agent.body_points, peer.agent.body_points,
                        rt.robot_avoid_spec)
                    avoid_net += net
                    avoid_tot += tot
            # table obstacle: plane height raised by the block while grasped
            z = self.layout.grid.origin[2]
            if agent.grasped_block is not None:
                z += self.layout.blocks[0].size
            plane_pt = np.array([agent.position[0], agent.position[1], z])
            f_table = gaussian_avoidance_force(agent.position, plane_pt,
                                               self.table_spec)
            f_hand = np.zeros(3)
            hand_tot = 0.0
            f_damp = np.zeros(3)
            damp_tot = 0.0
            for hid in sorted(self.hands):
                hr = self.hands[hid]
                if hr.points is None:
                    continue
                for kp in range(len(hr.points)):
                    p, v = hr.points[kp], hr.velocities[kp]
                    if rt.hand_avoid_spec is not None:
                        f = gaussian_avoidance_force(agent.position, p,
                                                     rt.hand_avoid_spec)
                        f_hand += f
                        hand_tot += norm(f)
                    if rt.damper_spec is not None:
                        try:
                            f = unilateral_damper_force(
                                agent.position, agent.velocity, p, v,
                                rt.damper_spec)
                            rt.damper_prev = f
                        except DegenerateGeometryError:
                            f = rt.damper_prev
                        f_damp += f
                        damp_tot += norm(f)
            net = f_goal + avoid_net + f_table + f_hand + f_damp
            tot = (norm(f_goal) + avoid_tot + norm(f_table) + hand_tot)
            net_rho = net
            if springs_only:
                net_rho = net - f_damp
            else:
                tot += damp_tot
            rt.rho = tot - norm(net_rho)
            rt.f_net = net
            rt.forces = {"goal": f_goal, "avoid": avoid_net,
                         "avoid_tot": avoid_tot, "table": f_table,
                         "hand": f_hand, "damper": f_damp}

    def _dist_to_nearest_robot(self, rt: RobotRuntime) -> float:
        dists = [norm(rt.agent.position - p.agent.position)
                 for p in self.robots if p.index != rt.index]
        return min(dists) if dists else float("inf")

    def _make_status(self, rt: RobotRuntime):
        def build(round_no: int):
            if rt.sm is not None and rt.sm.finished:
                state = "finished"
            elif rt.stalled:
                state = "stalled"
            else:
                state = "not_stalled"
            dist_goal = (norm(rt.agent.position - rt.waypoint)
                         if rt.waypoint is not None else float("inf"))
            return NegotiationMessage(
                sender=rt.index, round=round_no, state=state,
                priority_count=rt.negotiator.priority.counters.get(rt.index, 0),
                dist_to_goal=dist_goal,
                grasping_flag=(rt.sm.grasping_flag if rt.sm else False),
                dist_to_nearest_robot=self._dist_to_nearest_robot(rt))
        return build

    def _run_negotiation(self) -> None:
        t = self.t
        self.transport.deliver(self.step_idx)
        any_change = False
        for rt in self.robots:
            neg = rt.negotiator
            inbox = self.transport.inbox(rt.index)
            rule_ii = (rt.sm is not None and rt.sm.grasping_flag
                       and self._dist_to_nearest_robot(rt)
                       < self.config.rule_ii_proximity)
            finished = rt.sm is not None and rt.sm.finished
            trigger = (rt.stalled or rule_ii) and not finished
            reached = (neg.priority.holder == rt.index
                       and rt.waypoint is not None
                       and norm(rt.agent.position - rt.waypoint)
                       <= RELEASE_TOLERANCE)
            out, events = neg.step(t, self._make_status(rt), trigger,
                                   reached, inbox)
            for env in out:
                self.transport.broadcast(env, self.step_idx)
            for ev in events:
                if ev[0] == "grant":
                    winner, round_no = ev[1], ev[2]
                    if round_no not in self._recorded_grant_rounds:
                        self._recorded_grant_rounds.add(round_no)
                        self._event("priority_granted", winner=winner,
                                    round=round_no, robot=rt.index)
                        any_change = True
                elif ev[0] == "release":
                    self._event("priority_released", holder=ev[1],
                                robot=rt.index)
                    any_change = True
                elif ev[0] == "conflict":
                    self._event("priority_conflict", robot=rt.index)
                    any_change = True
        if any_change:
            for rt in self.robots:
                rt.detector.reset()
        # drain the transport log into the trace for protocol audits
        for env in self.transport.log:
            payload = env.payload
            if hasattr(payload, "to_dict"):
                payload = payload.to_dict()
            self._event("message", sender=env.sender, msg_kind=env.kind,
                        round=env.round, payload=payload)
        self.transport.log.clear()

    def _advance_tasks(self) -> None:
        t = self.t
        for rt in self.robots:
            suspended = self._suspended(rt)
            if suspended != rt.was_suspended:
                if not suspended and rt.waypoint is not None:
                    # goal spring re-enabled: restart the filter from here
                    self._set_waypoint(rt, rt.waypoint, t)
                rt.was_suspended = suspended
            if rt.sm is None or suspended:
                continue
            before = rt.sm.waypoint
            events = rt.sm.advance(t, rt.agent.position, rt.agent.speed,
                                   rt.agent)
            for ev in events:
                fields = {"robot": ev.robot}
                if ev.block is not None:
                    fields["block"] = ev.block
                if ev.cell is not None:
                    fields["cell"] = ev.cell
                if ev.segment is not None:
                    fields["segment"] = ev.segment
                self._event(ev.kind, **fields)
            after = rt.sm.waypoint
            if after is not None and (before is None
                                      or not np.array_equal(before, after)):
                self._set_waypoint(rt, after, t)

    def _advance_scripted_humans(self) -> None:
        if self.config.scenario != "mixed_checkerboard":
            return
        due = (self._human_place_cursor + 1) * HUMAN_PLACE_INTERVAL
        if self.t < due:
            return
        human_open = [c for c in self.layout.human_cells
                      if c not in self.board.filled]
        if not human_open:
            return
        cell = next_cell(self.layout.grid, self.board.filled, human_open,
                        self.board.rng)
        taken = set(self.board.reserved_blocks.values())
        free = [b for b in self.board.blocks.values()
                if b.state == "at_home" and b.id not in taken]
        if cell is None or not free:
            return
        block = min(free, key=lambda b: b.id)
        block.state = "placed"
        block.cell = cell
        block.position = self.layout.grid.cell_center(cell) + vec(
            0, 0, block.size / 2)
        self.board.filled.add(cell)
        self._human_place_cursor += 1
        self._event("human_place", block=block.id, cell=cell)

    def _record_step(self) -> None:
        agents = []
        forces = []
        for rt in self.robots:
            a = rt.agent
            agents.append({
                "i": rt.index,
                "x": [float(v) for v in a.position],
                "v": [float(v) for v in a.velocity],
                "g": a.grasped_block,
                "rho": float(rt.rho),
                "sp": float(a.speed),
                "ph": rt.sm.phase if rt.sm else rt.role,
            })
            forces.append({k: ([float(x) for x in v]
                               if isinstance(v, np.ndarray) else float(v))
                           for k, v in rt.forces.items()})
        hands = None
        if self.hands:
            hands = {}
            for hid in sorted(self.hands):
                hr = self.hands[hid]
                hands[str(hid)] = (None if hr.points is None else
                                   [[float(v) for v in p] for p in hr.points])
        pri = {"h": None, "c": {}}
        if self.config.negotiation and self.robots:
            p = self.robots[0].negotiator.priority
            pri = {"h": p.holder,
                   "c": {str(k): v for k, v in sorted(p.counters.items())}}
        self.records.append({"type": "step", "t": round(self.t, 9),
                             "agents": agents, "forces": forces,
                             "hands": hands, "pri": pri})

    # -- main loop ---------------------------------------------------------

    def step(self) -> None:
        if self.step_idx % self.hand_stride == 0 and self.hands:
            self._sample_hands()
        self._compute_forces()
        for rt in self.robots:
            if self._holder(rt) is not None:
                # a grant is already in force; re-detections are noise
                rt.detector.reset()
                rt.stalled = False
                rt.was_stalled = False
                continue
            rt.stalled = rt.detector.update(self.t, rt.rho, rt.agent.speed)
            if rt.stalled and not rt.was_stalled:
                self._event("stall_detected", robot=rt.index,
                            rho=float(rt.rho))
            rt.was_stalled = rt.stalled
        if self.transport is not None:
            self._run_negotiation()
        self._advance_scripted_humans()
        self._advance_tasks()
        for rt in self.robots:
            step_agent(rt.agent, rt.f_net, self.dt,
                       self.config.viscous_damping)
        if self.step_idx % self.config.trace_every == 0:
            self._record_step()
        self.step_idx += 1

    def completed(self) -> bool:
        has_task = any(rt.sm is not None for rt in self.robots)
        if not has_task or not self.layout.blocks:
            return False
        return self.board.unplaced() == 0

    def run(self) -> RunResult:
        max_steps = int(round(self.config.duration_cap / self.dt))
        try:
            while self.step_idx < max_steps:
                self.step()
                if self.completed():
                    self.status = "completed"
                    break
            else:
                has_task = any(rt.sm is not None for rt in self.robots)
                self.status = "capped" if has_task else "completed"
        except SimulationFault as e:
            self.status = "faulted"
            self._event("fault", message=str(e))
        self._record_step()
        self.records.append({"type": "end", "t": round(self.t, 9),
                             "status": self.status})
        metrics = analysis.compute_metrics(self.records)
        return RunResult(records=self.records, metrics=metrics,
                         status=self.status, layout=self.layout)


def run(config: RunConfig,
        hand_sources: Optional[dict[int, HandSource]] = None) -> RunResult:
    return Simulation(config, hand_sources=hand_sources).run()


def rerun_from_trace(records: list[dict]) -> RunResult:
    """Re-simulate headlessly using the hand samples recorded in a trace."""
    header = records[0]
    config = RunConfig.from_dict(dict(header["config"]))
    samples: dict[int, list] = {}
    for rec in records:
        if rec.get("type") == "event" and rec.get("kind") == "hand_sample":
            samples.setdefault(rec["hand"], []).append(
                (rec["t"], rec["points"]))
    config.hand_script = None
    # replay over the recorded horizon, not the original cap
    config.duration_cap = max((r["t"] for r in records if "t" in r),
                              default=0.0)
    sources = {hid: RecordedHandSource(s) for hid, s in samples.items()}
    return run(config, hand_sources=sources)


def replay(records: list[dict]) -> analysis.MetricsRecord:
    """Recompute metrics from a persisted trace."""
    return analysis.compute_metrics(records)

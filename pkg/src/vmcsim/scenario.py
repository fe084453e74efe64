"""Pick-and-place world: grid, blocks, robot placement, per-robot task state
machines and hand-position sources.

Canonical layout (documented convention, published with the package): a 4x4
grid of 6 cm cells centered on the table origin, with 16 block homes on a
ring around it -- 8 per long side, 6 cm apart, 6 cm from the grid edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .vec import Vec3, norm, vec

GRID_N = 4
GRID_PITCH = 0.06          # m
BLOCK_SIZE = 0.03          # m
BLOCK_ROW_OFFSET = 0.18    # m, block rows at y = +/- this
TABLE_Z = 0.0
BLOCK_CENTER_Z = BLOCK_SIZE / 2.0
GRASP_Z = 0.05             # EE height when grasping/placing a block
ABOVE_Z = 0.15             # EE height for hover/transport waypoints
REST_Z = 0.20
HAND_RATE = 10.0           # Hz
HAND_ABSENCE_TIMEOUT = 1.0  # s

WAYPOINT_TOLERANCE = 0.01  # m
WAYPOINT_SPEED_TOLERANCE = 0.02  # m/s

ROBOT_BASES = [vec(0.0, -0.55, 0.25), vec(0.0, 0.55, 0.25),
               vec(-0.55, 0.0, 0.25), vec(0.55, 0.0, 0.25)]
ROBOT_REACH = 0.85

PHASES = ("idle", "move_above_block", "descend", "grasp", "lift", "transport",
          "descend_place", "release", "retreat", "done")
GRASPING_PHASES = ("grasp", "release", "descend_place")


@dataclass(frozen=True)
class GridSpec:
    origin: Vec3 = field(default_factory=lambda: vec(0.0, 0.0, TABLE_Z))
    pitch: float = GRID_PITCH
    n: int = GRID_N

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def size(self) -> float:
        return self.n * self.pitch

    def cell_center(self, idx: int) -> Vec3:
        i, j = divmod(idx, self.n)
        off = (self.n - 1) / 2.0
        return self.origin + vec((j - off) * self.pitch, (i - off) * self.pitch, 0.0)

    def center_distance(self, idx: int) -> float:
        return norm(self.cell_center(idx) - self.origin)


@dataclass
class Block:
    id: int
    home: Vec3
    size: float = BLOCK_SIZE
    state: str = "at_home"     # "at_home" | "held" | "placed"
    holder: Optional[int] = None
    cell: Optional[int] = None
    position: Vec3 = None

    def __post_init__(self):
        if self.position is None:
            self.position = self.home.copy()


@dataclass
class Layout:
    grid: GridSpec
    blocks: list[Block]
    robot_bases: dict[int, Vec3]
    reach_radius: float
    scenario: str
    n_robots: int
    own_blocks: dict[int, list[int]]          # initial pick preference
    permitted_cells: dict[int, list[int]]     # per robot
    human_cells: list[int] = field(default_factory=list)
    fixed_plan: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    rest_positions: dict[int, Vec3] = field(default_factory=dict)
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "n_robots": self.n_robots,
            "seed": self.seed,
            "grid": {"origin": list(self.grid.origin), "pitch": self.grid.pitch,
                     "n": self.grid.n},
            "blocks": [{"id": b.id, "home": [round(v, 9) for v in b.home]}
                       for b in self.blocks],
            "robot_bases": {str(k): list(v) for k, v in self.robot_bases.items()},
            "reach_radius": self.reach_radius,
            "own_blocks": {str(k): v for k, v in self.own_blocks.items()},
            "permitted_cells": {str(k): v for k, v in self.permitted_cells.items()},
            "human_cells": self.human_cells,
            "fixed_plan": {str(k): v for k, v in self.fixed_plan.items()},
        }


def canonical_block_homes() -> list[Vec3]:
    """16 homes: 8 per long side, 6 cm apart, 6 cm outside the grid edge."""
    xs = [(-3.5 + i) * GRID_PITCH for i in range(8)]
    homes = []
    for side in (-1.0, 1.0):
        for x in xs:
            homes.append(vec(x, side * BLOCK_ROW_OFFSET, BLOCK_CENTER_Z))
    return homes


def _rest_position(base: Vec3) -> Vec3:
    xy = np.array([base[0], base[1], 0.0])
    d = norm(xy)
    towards = xy / d if d > 0 else vec(0, -1, 0)
    return vec(towards[0] * 0.40, towards[1] * 0.40, REST_Z)


def build_layout(n_robots: int, scenario: str, seed: int = 0) -> Layout:
    """Deterministic world description for scenario A, B, mixed_checkerboard
    or the two-block crossing-transport scenario."""
    if scenario == "crossing":
        return _crossing_layout(seed)
    if not 1 <= n_robots <= 4:
        raise ValueError("n_robots must be in 1..4")
    if scenario not in ("A", "B", "mixed_checkerboard"):
        raise ValueError(f"unknown scenario {scenario!r}")
    grid = GridSpec()
    homes = canonical_block_homes()
    blocks = [Block(id=i, home=h) for i, h in enumerate(homes)]
    bases = {r: ROBOT_BASES[r].copy() for r in range(n_robots)}

    # initial pick preference: blocks nearest each robot's base
    own: dict[int, list[int]] = {r: [] for r in range(n_robots)}
    for b in blocks:
        nearest = min(bases, key=lambda r: (norm(b.home - bases[r]), r))
        own[nearest].append(b.id)

    all_cells = list(range(grid.n_cells))
    human_cells: list[int] = []
    if scenario == "mixed_checkerboard":
        human_cells = [idx for idx in all_cells
                       if (idx // grid.n + idx % grid.n) % 2 == 1]
        robot_pool = [idx for idx in all_cells if idx not in human_cells]
        permitted = {r: list(robot_pool) for r in range(n_robots)}
    elif scenario == "B":
        permitted = _partition_cells(grid, bases)
    else:
        permitted = {r: list(all_cells) for r in range(n_robots)}

    return Layout(grid=grid, blocks=blocks, robot_bases=bases,
                  reach_radius=ROBOT_REACH, scenario=scenario,
                  n_robots=n_robots, own_blocks=own,
                  permitted_cells=permitted, human_cells=human_cells,
                  rest_positions={r: _rest_position(bases[r]) for r in bases},
                  seed=seed)


def _partition_cells(grid: GridSpec, bases: dict[int, Vec3]) -> dict[int, list[int]]:
    """Scenario B: each robot owns the cells nearest its base, with counts
    balanced to ceil(16 / n)."""
    n = len(bases)
    cap = math.ceil(grid.n_cells / n)
    permitted: dict[int, list[int]] = {r: [] for r in bases}
    order = sorted(range(grid.n_cells),
                   key=lambda c: min(norm(grid.cell_center(c) - bases[r])
                                     for r in bases))
    for c in order:
        ranked = sorted(bases, key=lambda r: (norm(grid.cell_center(c) - bases[r]), r))
        for r in ranked:
            if len(permitted[r]) < cap:
                permitted[r].append(c)
                break
    for r in permitted:
        permitted[r].sort()
    return permitted


def _crossing_layout(seed: int) -> Layout:
    """Two robots transporting single blocks along overlapping head-on
    straight lines through the grid."""
    grid = GridSpec()
    blocks = [Block(id=0, home=vec(-0.30, 0.03, BLOCK_CENTER_Z)),
              Block(id=1, home=vec(0.30, 0.03, BLOCK_CENTER_Z))]
    bases = {0: ROBOT_BASES[2].copy(), 1: ROBOT_BASES[3].copy()}
    # cell centers (0.09, 0.03) and (-0.09, 0.03) -> indices in row i=2
    right_cell = 2 * GRID_N + 3
    left_cell = 2 * GRID_N + 0
    return Layout(grid=grid, blocks=blocks, robot_bases=bases,
                  reach_radius=ROBOT_REACH, scenario="crossing", n_robots=2,
                  own_blocks={0: [0], 1: [1]},
                  permitted_cells={0: [right_cell], 1: [left_cell]},
                  fixed_plan={0: [(0, right_cell)], 1: [(1, left_cell)]},
                  rest_positions={r: _rest_position(bases[r]) for r in bases},
                  seed=seed)


def next_cell(grid: GridSpec, filled: set[int], permitted: list[int],
              rng: np.random.Generator) -> Optional[int]:
    """Unfilled permitted cell of minimal center distance, ties uniform."""
    open_cells = [c for c in permitted if c not in filled]
    if not open_cells:
        return None
    dmin = min(grid.center_distance(c) for c in open_cells)
    ties = [c for c in open_cells if grid.center_distance(c) <= dmin + 1e-12]
    return ties[int(rng.integers(len(ties)))]


class TaskBoard:
    """Global block/cell reservations, mediated inside the deterministic step
    loop (assignments are handed out sequentially in agent-index order)."""

    def __init__(self, layout: Layout, seed: int):
        self.layout = layout
        self.blocks = {b.id: b for b in layout.blocks}
        self.filled: set[int] = set()
        self.reserved_cells: dict[int, int] = {}   # robot -> cell
        self.reserved_blocks: dict[int, int] = {}  # robot -> block
        self.rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xB10C])
        self._plan_cursor = {r: 0 for r in layout.fixed_plan}

    def unplaced(self) -> int:
        return sum(1 for b in self.blocks.values() if b.state != "placed")

    def release_reservation(self, robot: int) -> None:
        self.reserved_cells.pop(robot, None)
        self.reserved_blocks.pop(robot, None)

    def request_assignment(self, robot: int, base: Vec3
                           ) -> Optional[tuple[int, int]]:
        if robot in self.layout.fixed_plan:
            cur = self._plan_cursor[robot]
            plan = self.layout.fixed_plan[robot]
            if cur >= len(plan):
                return None
            block_id, cell = plan[cur]
            self._plan_cursor[robot] = cur + 1
            self.reserved_blocks[robot] = block_id
            self.reserved_cells[robot] = cell
            return block_id, cell
        taken = set(self.reserved_blocks.values())
        free = [b for b in self.blocks.values()
                if b.state == "at_home" and b.id not in taken]
        if not free:
            return None
        own = set(self.layout.own_blocks.get(robot, []))
        preferred = [b for b in free if b.id in own] or free
        block = min(preferred, key=lambda b: (norm(b.home - base), b.id))
        blocked = self.filled | set(self.reserved_cells.values())
        cell = next_cell(self.layout.grid, blocked,
                         self.layout.permitted_cells[robot], self.rng)
        if cell is None:
            return None
        self.reserved_blocks[robot] = block.id
        self.reserved_cells[robot] = cell
        return block.id, cell

    def place(self, robot: int, block_id: int, cell: int) -> None:
        b = self.blocks[block_id]
        b.state = "placed"
        b.holder = None
        b.cell = cell
        b.position = self.layout.grid.cell_center(cell) + vec(0, 0, BLOCK_CENTER_Z)
        self.filled.add(cell)
        self.release_reservation(robot)


@dataclass
class TaskEvent:
    t: float
    robot: int
    kind: str        # "grasp" | "place" | "transfer_start" | "transfer_end" | "replan" | "done"
    block: Optional[int] = None
    cell: Optional[int] = None
    segment: Optional[tuple] = None   # ((x0,y0),(x1,y1)) for transfer_start


class PickPlaceStateMachine:
    """Waypoint-driven phase machine for one robot."""

    def __init__(self, robot: int, board: TaskBoard, rest_position: Vec3,
                 tol: float = WAYPOINT_TOLERANCE,
                 speed_tol: float = WAYPOINT_SPEED_TOLERANCE):
        self.robot = robot
        self.board = board
        self.rest_position = rest_position
        self.tol = tol
        self.speed_tol = speed_tol
        self.phase = "idle"
        self.block_id: Optional[int] = None
        self.cell: Optional[int] = None
        self.waypoint: Optional[Vec3] = None

    @property
    def grasping_flag(self) -> bool:
        return self.phase in GRASPING_PHASES

    @property
    def finished(self) -> bool:
        return self.phase == "done"

    def _above_block(self) -> Vec3:
        home = self.board.blocks[self.block_id].home
        return vec(home[0], home[1], ABOVE_Z)

    def _grasp_point(self) -> Vec3:
        home = self.board.blocks[self.block_id].home
        return vec(home[0], home[1], GRASP_Z)

    def _above_cell(self) -> Vec3:
        c = self.board.layout.grid.cell_center(self.cell)
        return vec(c[0], c[1], ABOVE_Z)

    def _place_point(self) -> Vec3:
        c = self.board.layout.grid.cell_center(self.cell)
        return vec(c[0], c[1], GRASP_Z)

    def _reached(self, pos: Vec3, speed: float) -> bool:
        return (self.waypoint is not None
                and norm(pos - self.waypoint) <= self.tol
                and speed < self.speed_tol)

    def _replan(self, t: float, events: list[TaskEvent]) -> None:
        events.append(TaskEvent(t, self.robot, "replan", block=self.block_id))
        self.board.release_reservation(self.robot)
        self.block_id = None
        self.cell = None
        self.phase = "idle"
        self.waypoint = None

    def advance(self, t: float, pos: Vec3, speed: float, agent
                ) -> list[TaskEvent]:
        """Advance the phase machine; mutates the agent's grasp state and the
        shared board. Returns emitted task events."""
        events: list[TaskEvent] = []
        if self.phase == "idle":
            assignment = self.board.request_assignment(
                self.robot, self.board.layout.robot_bases[self.robot])
            if assignment is None:
                self.phase = "done"
                self.waypoint = self.rest_position
                events.append(TaskEvent(t, self.robot, "done"))
            else:
                self.block_id, self.cell = assignment
                self.phase = "move_above_block"
                self.waypoint = self._above_block()
            return events

        if self.phase == "done" or not self._reached(pos, speed):
            return events

        if self.phase == "move_above_block":
            if self.board.blocks[self.block_id].state != "at_home":
                self._replan(t, events)
            else:
                self.phase = "descend"
                self.waypoint = self._grasp_point()
        elif self.phase == "descend":
            self.phase = "grasp"
        elif self.phase == "grasp":
            block = self.board.blocks[self.block_id]
            if block.state != "at_home":
                self._replan(t, events)
            else:
                block.state = "held"
                block.holder = self.robot
                agent.grasped_block = self.block_id
                events.append(TaskEvent(t, self.robot, "grasp",
                                        block=self.block_id))
                self.phase = "lift"
                self.waypoint = self._above_block()
        elif self.phase == "lift":
            self.phase = "transport"
            src = self._above_block()
            dst = self._above_cell()
            self.waypoint = dst
            events.append(TaskEvent(
                t, self.robot, "transfer_start", block=self.block_id,
                cell=self.cell,
                segment=((float(src[0]), float(src[1])),
                         (float(dst[0]), float(dst[1])))))
        elif self.phase == "transport":
            events.append(TaskEvent(t, self.robot, "transfer_end",
                                    block=self.block_id, cell=self.cell))
            self.phase = "descend_place"
            self.waypoint = self._place_point()
        elif self.phase == "descend_place":
            self.phase = "release"
        elif self.phase == "release":
            self.board.place(self.robot, self.block_id, self.cell)
            agent.grasped_block = None
            events.append(TaskEvent(t, self.robot, "place",
                                    block=self.block_id, cell=self.cell))
            self.phase = "retreat"
            self.waypoint = self._above_cell()
        elif self.phase == "retreat":
            self.block_id = None
            self.cell = None
            self.phase = "idle"
            self.waypoint = None
        return events


class HandSource:
    """Base hand source; engine samples at HAND_RATE and holds in between."""

    def sample(self, t: float, world) -> Optional[np.ndarray]:
        raise NotImplementedError


class ScriptedHandSource(HandSource):
    def __init__(self, fn: Callable[[float, object], Optional[np.ndarray]]):
        self.fn = fn

    def sample(self, t, world):
        return self.fn(t, world)


class RecordedHandSource(HandSource):
    """Replays hand samples recorded at the 10 Hz boundaries of a live run."""

    def __init__(self, samples: list[tuple[float, Optional[list]]]):
        self.samples = sorted(samples, key=lambda s: s[0])

    def sample(self, t, world):
        value = None
        for ts, pts in self.samples:
            if ts <= t + 1e-9:
                value = pts
            else:
                break
        if value is None:
            return None
        return np.asarray(value, dtype=float)


class LiveHandSource(HandSource):
    """Single-slot mailbox fed asynchronously; the hand is treated as absent
    after HAND_ABSENCE_TIMEOUT without updates."""

    def __init__(self, timeout: float = HAND_ABSENCE_TIMEOUT):
        self.timeout = timeout
        self._points: Optional[np.ndarray] = None
        self._fed_at: Optional[float] = None

    def feed(self, points, t: float) -> None:
        self._points = None if points is None else np.asarray(points, dtype=float)
        self._fed_at = t

    def sample(self, t, world):
        if self._points is None or self._fed_at is None:
            return None
        if t - self._fed_at > self.timeout:
            return None
        return self._points


class ApproachRetreatScript:
    """Deterministic scripted hand: repeated approach toward a fixed deep
    point near the robot's hold position, dwell, retreat, rest."""

    def __init__(self, start: Vec3, deep: Vec3, speed: float = 0.8,
                 dwell: float = 1.0, rest: float = 1.0, entries: int = 4):
        self.start = np.asarray(start, dtype=float)
        self.deep = np.asarray(deep, dtype=float)
        self.speed = speed
        self.dwell = dwell
        self.rest = rest
        self.entries = entries
        leg = norm(self.deep - self.start) / speed
        self.cycle = 2 * leg + dwell + rest
        self.leg = leg

    def __call__(self, t: float, world) -> Optional[np.ndarray]:
        if t < 0 or t >= self.entries * self.cycle:
            return None
        u = t % self.cycle
        if u < self.leg:
            s = u / self.leg
        elif u < self.leg + self.dwell:
            s = 1.0
        elif u < 2 * self.leg + self.dwell:
            s = 1.0 - (u - self.leg - self.dwell) / self.leg
        else:
            return None  # resting outside the workspace
        p = self.start + s * (self.deep - self.start)
        return p[None, :]

"""Decentralized stall detection and priority negotiation.

A robot is stalled when the gap rho between the summed magnitudes of its
component forces and the magnitude of their vector sum stays above a
threshold while the robot makes no progress. Stalled robots negotiate a
single priority holder through a round-based message exchange; the draw is
keyed on the round number so every node computes the identical winner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import ForceBreakdown
from .vec import Vec3, norm

DEFAULT_STALL_THRESHOLD = 4.0     # N
DEFAULT_STALL_DWELL = 0.5         # s
DEFAULT_PROGRESS_FLOOR = 0.01     # m/s
DEFAULT_PROXIMITY_THRESHOLD = 0.15  # m, rule (ii)
CLOSE_TO_GOAL = 0.06              # m, rule (iii)
ROUND_TIMEOUT = 0.2               # s
RELEASE_TOLERANCE = 0.01          # m


@dataclass
class StallMetricSample:
    rho: float
    f_net: float
    f_tot: float
    time: float


def stall_metric(breakdown: ForceBreakdown, time: float = 0.0) -> StallMetricSample:
    """rho = sum of component force magnitudes minus magnitude of their sum."""
    f_tot = breakdown.total_magnitude
    f_net = norm(breakdown.net)
    return StallMetricSample(rho=f_tot - f_net, f_net=f_net, f_tot=f_tot, time=time)


def detect_stall(samples: list[StallMetricSample], speeds: list[float],
                 threshold: float, dwell: float,
                 progress_floor: float = DEFAULT_PROGRESS_FLOOR) -> bool:
    """True iff rho stays above threshold and speed below the progress floor
    continuously over the trailing dwell window."""
    if not samples:
        return False
    t_end = samples[-1].time
    covered = t_end - samples[0].time
    if covered < dwell:
        return False
    for s, v in zip(reversed(samples), reversed(speeds)):
        if t_end - s.time > dwell:
            break
        if s.rho <= threshold or v >= progress_floor:
            return False
    return True


class StallDetector:
    """Incremental equivalent of detect_stall over a streaming signal."""

    def __init__(self, threshold: float = DEFAULT_STALL_THRESHOLD,
                 dwell: float = DEFAULT_STALL_DWELL,
                 progress_floor: float = DEFAULT_PROGRESS_FLOOR):
        self.threshold = threshold
        self.dwell = dwell
        self.progress_floor = progress_floor
        self._since: Optional[float] = None

    def update(self, t: float, rho: float, speed: float) -> bool:
        if rho > self.threshold and speed < self.progress_floor:
            if self._since is None:
                self._since = t
            return t - self._since >= self.dwell
        self._since = None
        return False

    def reset(self) -> None:
        self._since = None


@dataclass
class NegotiationMessage:
    sender: int
    round: int
    state: str                    # "stalled" | "not_stalled" | "finished"
    priority_count: int
    dist_to_goal: float
    grasping_flag: bool
    dist_to_nearest_robot: float

    def to_dict(self) -> dict:
        return {"sender": self.sender, "round": self.round, "state": self.state,
                "priority_count": self.priority_count,
                "dist_to_goal": self.dist_to_goal,
                "grasping_flag": self.grasping_flag,
                "dist_to_nearest_robot": self.dist_to_nearest_robot}


@dataclass
class PriorityState:
    holder: Optional[int] = None
    granted_at: float = 0.0
    counters: dict = field(default_factory=dict)


def _round_rng(seed: int, round_no: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0x7FFFFFFF, round_no])


def select_priority(candidates: list[NegotiationMessage], priority: PriorityState,
                    alpha: float, rng_key: tuple[int, int],
                    proximity_threshold: float = DEFAULT_PROXIMITY_THRESHOLD,
                    close_tolerance: float = CLOSE_TO_GOAL) -> Optional[int]:
    """Pick the robot to prioritize, or None.

    Rule (i) excludes finished robots; rules (ii) and (iii) form a preferred
    set; the draw (within the preferred set if non-empty, otherwise over all
    stalled robots) is the softmax over negative grant counters. The winner's
    counter is incremented. Returns None while a holder exists.
    """
    if priority.holder is not None:
        return None
    active = [m for m in candidates if m.state != "finished"]
    if not active:
        return None
    stalled = [m for m in active if m.state == "stalled"]
    preferred = [m for m in active
                 if (m.grasping_flag and m.dist_to_nearest_robot < proximity_threshold)
                 or (m.state == "stalled" and m.dist_to_goal < close_tolerance)]
    pool = preferred if preferred else stalled
    if not pool:
        return None
    pool = sorted(pool, key=lambda m: m.sender)
    counts = np.array([priority.counters.get(m.sender, 0) for m in pool], dtype=float)
    weights = np.exp(-alpha * counts)
    probs = np.cumsum(weights / weights.sum())
    u = float(_round_rng(*rng_key).random())
    idx = int(min(np.searchsorted(probs, u, side="right"), len(pool) - 1))
    winner = pool[idx].sender
    priority.counters[winner] = priority.counters.get(winner, 0) + 1
    return winner


@dataclass(frozen=True)
class ToggleCommand:
    agent: int
    category: str   # "goal" | "robot_avoid" | "hand_avoid"
    enabled: bool


def apply_priority(winner: int, all_robots: list[int]) -> list[ToggleCommand]:
    """Winner drops robot-robot avoidance (hand avoidance stays on); every
    other robot suspends goal-directed motion but keeps avoiding."""
    cmds = [ToggleCommand(winner, "robot_avoid", False),
            ToggleCommand(winner, "goal", True),
            ToggleCommand(winner, "hand_avoid", True)]
    for r in all_robots:
        if r != winner:
            cmds.append(ToggleCommand(r, "goal", False))
    return cmds


def release_priority(priority: PriorityState, winner_position: Vec3,
                     waypoint: Vec3, all_robots: list[int],
                     tolerance: float = RELEASE_TOLERANCE
                     ) -> Optional[list[ToggleCommand]]:
    """Restore original attachments once the holder reaches its waypoint."""
    if priority.holder is None:
        return None
    if norm(winner_position - waypoint) > tolerance:
        return None
    cmds = [ToggleCommand(priority.holder, "robot_avoid", True)]
    for r in all_robots:
        cmds.append(ToggleCommand(r, "goal", True))
    priority.holder = None
    return cmds


@dataclass
class Envelope:
    sender: int
    kind: str       # "status" | "grant" | "release"
    round: int
    t: float
    payload: object = None


class MessageTransport:
    """In-process broadcast mailbox with configurable delivery delay (in
    steps) and drop rate, for protocol robustness tests."""

    def __init__(self, agents: list[int], delay_steps: int = 1,
                 drop_rate: float = 0.0, seed: int = 0):
        self.agents = list(agents)
        self.delay_steps = max(1, int(delay_steps))
        self.drop_rate = drop_rate
        self._rng = np.random.default_rng([seed & 0x7FFFFFFF, 0xFACE])
        self._pending: list[tuple[int, int, Envelope]] = []
        self._mailboxes = {a: [] for a in self.agents}
        self.log: list[Envelope] = []

    def broadcast(self, env: Envelope, step: int) -> None:
        self.log.append(env)
        for a in self.agents:
            if a == env.sender:
                continue
            if self.drop_rate > 0.0 and self._rng.random() < self.drop_rate:
                continue
            self._pending.append((step + self.delay_steps, a, env))

    def deliver(self, step: int) -> None:
        remaining = []
        for due, a, env in self._pending:
            if due <= step:
                self._mailboxes[a].append(env)
            else:
                remaining.append((due, a, env))
        self._pending = remaining

    def inbox(self, agent: int) -> list[Envelope]:
        msgs = self._mailboxes[agent]
        self._mailboxes[agent] = []
        return msgs


class Negotiator:
    """Per-robot protocol state machine.

    Every node keeps a replica of the priority state; grants are computed
    locally from the identical message set (or announced via grant messages
    when inboxes diverge) so no shared memory is needed.
    """

    def __init__(self, agent_index: int, n_robots: int, alpha: float,
                 seed: int, round_timeout: float = ROUND_TIMEOUT,
                 proximity_threshold: float = DEFAULT_PROXIMITY_THRESHOLD):
        self.agent_index = agent_index
        self.n_robots = n_robots
        self.alpha = alpha
        self.seed = seed
        self.round_timeout = round_timeout
        self.proximity_threshold = proximity_threshold
        self.priority = PriorityState()
        self.last_round = 0
        self.active_round: Optional[int] = None
        self.round_start = 0.0
        self.round_msgs: dict[int, NegotiationMessage] = {}
        self._counted_rounds: set[int] = set()
        self._replied_rounds: set[int] = set()

    # -- internals ---------------------------------------------------------

    def _count_grant(self, winner: int, round_no: int, t: float) -> None:
        self.priority.holder = winner
        self.priority.granted_at = t
        if round_no not in self._counted_rounds:
            self.priority.counters[winner] = \
                self.priority.counters.get(winner, 0) + 1
            self._counted_rounds.add(round_no)

    def _join_round(self, round_no: int, t: float, make_status) -> list[Envelope]:
        out = []
        if round_no > self.last_round:
            self.last_round = round_no
        if self.active_round is None or round_no > self.active_round:
            self.active_round = round_no
            self.round_start = t
            self.round_msgs = {}
        if round_no == self.active_round and round_no not in self._replied_rounds:
            own = make_status(round_no)
            self.round_msgs[self.agent_index] = own
            self._replied_rounds.add(round_no)
            out.append(Envelope(self.agent_index, "status", round_no, t, own))
        return out

    # -- main entry --------------------------------------------------------

    def step(self, t: float, make_status, trigger: bool,
             reached_waypoint: bool, inbox: list[Envelope]
             ) -> tuple[list[Envelope], list[tuple]]:
        """Advance the protocol one control cycle.

        make_status(round) builds this robot's NegotiationMessage. trigger is
        true when the local stall detector (or rule (ii)) asks for a round.
        Returns (outbound envelopes, events) where events are tuples like
        ("grant", winner, round), ("release", holder), ("conflict",).
        """
        out: list[Envelope] = []
        events: list[tuple] = []

        for env in inbox:
            if env.kind == "release":
                if self.priority.holder is not None:
                    events.append(("release", self.priority.holder))
                self.priority.holder = None
            elif env.kind == "grant":
                winner = env.payload
                if self.priority.holder is None:
                    self._count_grant(winner, env.round, t)
                    events.append(("grant", winner, env.round))
                elif self.priority.holder != winner:
                    # two holders observed: both dropped, renegotiate
                    self.priority.holder = None
                    events.append(("conflict",))
                self.active_round = None
            elif env.kind == "status":
                out.extend(self._join_round(env.round, t, make_status))
                if env.round == self.active_round:
                    self.round_msgs[env.payload.sender] = env.payload

        if (trigger and self.priority.holder is None
                and self.active_round is None):
            out.extend(self._join_round(self.last_round + 1, t, make_status))

        if self.active_round is not None and self.priority.holder is None:
            complete = len(self.round_msgs) >= self.n_robots
            timed_out = (t - self.round_start) >= self.round_timeout
            if complete or timed_out:
                r = self.active_round
                candidates = [self.round_msgs[s] for s in sorted(self.round_msgs)]
                winner = select_priority(
                    candidates, self.priority, self.alpha,
                    rng_key=(self.seed, r),
                    proximity_threshold=self.proximity_threshold)
                self.active_round = None
                if winner is not None:
                    self._counted_rounds.add(r)
                    self.priority.holder = winner
                    self.priority.granted_at = t
                    out.append(Envelope(self.agent_index, "grant", r, t, winner))
                    events.append(("grant", winner, r))
        elif self.active_round is not None:
            self.active_round = None

        if self.priority.holder == self.agent_index and reached_waypoint:
            out.append(Envelope(self.agent_index, "release", self.last_round, t))
            events.append(("release", self.agent_index))
            self.priority.holder = None

        return out, events

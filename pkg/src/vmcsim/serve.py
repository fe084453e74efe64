"""Live session server: steps the simulation paced to wall clock and speaks
a JSON-over-WebSocket protocol of three message kinds (snapshot, hand_input,
control), schema-versioned in the handshake.

The network side never blocks the stepper: hand input lands in a single-slot
mailbox read at step boundaries, and slow clients drop frames.
"""

from __future__ import annotations

import asyncio
import json
from typing import Optional

import numpy as np
import websockets

from .analysis import PAPER_SSM, ssm_protective_distance
from .config import DamperParams, RunConfig, load_preset
from .engine import Simulation
from .scenario import LiveHandSource
from .trace import config_hash
from .vec import norm

SCHEMA_VERSION = 1
SNAPSHOT_RATE = 30.0      # Hz, lower bound on broadcast cadence
CLIENT_QUEUE_DEPTH = 2    # snapshots buffered per client before dropping

PROFILE_PRESETS = ("profile1", "profile2", "profile3", "profile4")


def build_snapshot(sim: Simulation, paused: bool) -> dict:
    agents = []
    for rt in sim.robots:
        a = rt.agent
        agents.append({
            "i": rt.index,
            "x": [float(v) for v in a.position],
            "v": [float(v) for v in a.velocity],
            "base": [float(v) for v in a.base_position],
            "grasped": a.grasped_block,
            "rho": float(rt.rho),
            "phase": rt.sm.phase if rt.sm else rt.role,
            "forces": {k: [float(x) for x in v]
                       for k, v in rt.forces.items()
                       if isinstance(v, np.ndarray)},
        })
    hands = {}
    for hid in sorted(sim.hands):
        hr = sim.hands[hid]
        hands[str(hid)] = (None if hr.points is None else
                           [[float(v) for v in p] for p in hr.points])
    blocks = [{"id": b.id, "x": [float(v) for v in b.position],
               "state": b.state} for b in sim.layout.blocks]
    d_min_rr = None
    pos = [rt.agent.position for rt in sim.robots]
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            d = norm(pos[i] - pos[j])
            d_min_rr = d if d_min_rr is None else min(d_min_rr, d)
    d_min_rh = None
    for pts in hands.values():
        for kp in pts or ():
            for p in pos:
                d = norm(p - np.asarray(kp))
                d_min_rh = d if d_min_rh is None else min(d_min_rh, d)
    holder = None
    counters = {}
    if sim.config.negotiation and sim.robots:
        pri = sim.robots[0].negotiator.priority
        holder = pri.holder
        counters = {str(k): v for k, v in sorted(pri.counters.items())}
    return {
        "kind": "snapshot", "schema": SCHEMA_VERSION,
        "t": round(sim.t, 9), "paused": paused, "status": sim.status,
        "agents": agents, "hands": hands, "blocks": blocks,
        "priority": {"holder": holder, "counters": counters},
        "d_min_rr": d_min_rr, "d_min_rh": d_min_rh,
        "s_p": ssm_protective_distance(PAPER_SSM),
        "grid": {"pitch": sim.layout.grid.pitch, "n": sim.layout.grid.n},
    }


class ServeSession:
    """One simulation instance shared by any number of socket clients."""

    def __init__(self, config: RunConfig, realtime_factor: float = 1.0):
        self.config = config
        self.factor = realtime_factor
        self.hand = LiveHandSource()
        self.sim = Simulation(config, hand_sources={0: self.hand})
        self.paused = True
        self.stopped = False
        self._clients: set[asyncio.Queue] = set()
        self._wall_anchor: Optional[float] = None
        self._sim_anchor = 0.0

    # -- control -----------------------------------------------------------

    def start(self) -> None:
        self.paused = False
        self._wall_anchor = None

    def pause(self) -> None:
        self.paused = True

    def reset(self) -> None:
        self.hand = LiveHandSource()
        self.sim = Simulation(self.config, hand_sources={0: self.hand})
        self.paused = True
        self._wall_anchor = None

    def switch_profile(self, name: str, damper: Optional[bool]) -> None:
        if name not in PROFILE_PRESETS:
            raise ValueError(f"unknown profile {name!r}; "
                             f"choose one of {PROFILE_PRESETS}")
        if any(rt.agent.grasped_block is not None for rt in self.sim.robots):
            raise ValueError("cannot switch profiles while a block is held")
        preset = load_preset(name)
        params = preset.robots[0]
        hand_spec = params.hand_avoid.to_spec() if params.hand_avoid else None
        damper_spec = None
        if damper:
            damper_spec = DamperParams().to_spec()
        for rt in self.sim.robots:
            rt.hand_avoid_spec = hand_spec
            rt.damper_spec = damper_spec
        self.sim._event("profile_switch", profile=name,
                        damper=bool(damper))

    def handle_message(self, msg: dict) -> Optional[dict]:
        """Apply one client message; returns an optional direct reply."""
        kind = msg.get("kind")
        if kind == "hello":
            if msg.get("schema") != SCHEMA_VERSION:
                raise ValueError(
                    f"schema mismatch: server {SCHEMA_VERSION}, "
                    f"client {msg.get('schema')!r}")
            return self.hello()
        if kind == "hand_input":
            if msg.get("engaged"):
                p = [float(msg["x"]), float(msg["y"]),
                     float(msg.get("z", 0.15))]
                self.hand.feed([p], self.sim.t)
            else:
                self.hand.feed(None, self.sim.t)
            return None
        if kind == "control":
            action = msg.get("action")
            if action == "start":
                self.start()
            elif action == "pause":
                self.pause()
            elif action == "reset":
                self.reset()
            elif action == "profile":
                self.switch_profile(msg.get("profile"), msg.get("damper"))
            else:
                raise ValueError(f"unknown control action {action!r}")
            return {"kind": "ack", "action": action}
        raise ValueError(f"unknown message kind {kind!r}")

    def hello(self) -> dict:
        return {"kind": "hello", "schema": SCHEMA_VERSION,
                "seed": self.config.seed,
                "config_hash": config_hash(self.config.to_dict()),
                "profiles": list(PROFILE_PRESETS)}

    # -- stepping ----------------------------------------------------------

    def _advance_to_wall_clock(self, now: float) -> None:
        if self._wall_anchor is None:
            self._wall_anchor = now
            self._sim_anchor = self.sim.t
            return
        target = self._sim_anchor + (now - self._wall_anchor) * self.factor
        max_steps = int(round(self.config.duration_cap / self.config.dt))
        while self.sim.t < target and self.sim.step_idx < max_steps:
            self.sim.step()
            if self.sim.completed():
                self.sim.status = "completed"
                self.paused = True
                break

    def broadcast(self) -> None:
        snap = build_snapshot(self.sim, self.paused)
        data = json.dumps(snap)
        for q in self._clients:
            if q.full():
                try:
                    q.get_nowait()   # drop the stale frame, never block
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(data)

    async def run(self) -> None:
        loop = asyncio.get_event_loop()
        interval = 1.0 / SNAPSHOT_RATE
        while not self.stopped:
            if not self.paused:
                self._advance_to_wall_clock(loop.time())
            else:
                self._wall_anchor = None
            self.broadcast()
            await asyncio.sleep(interval)


async def _client_handler(session: ServeSession, ws) -> None:
    queue: asyncio.Queue = asyncio.Queue(maxsize=CLIENT_QUEUE_DEPTH)
    session._clients.add(queue)
    await ws.send(json.dumps(session.hello()))

    async def sender():
        while True:
            await ws.send(await queue.get())

    send_task = asyncio.create_task(sender())
    try:
        async for raw in ws:
            try:
                msg = json.loads(raw)
                if not isinstance(msg, dict):
                    raise ValueError("message must be an object")
                reply = session.handle_message(msg)
            except (ValueError, KeyError, TypeError) as e:
                await ws.send(json.dumps({"kind": "error", "message": str(e)}))
                continue
            if reply is not None:
                await ws.send(json.dumps(reply))
    finally:
        send_task.cancel()
        session._clients.discard(queue)


async def serve(config: RunConfig, port: int, host: str = "127.0.0.1",
                realtime_factor: float = 1.0,
                ready: Optional[asyncio.Event] = None,
                stop: Optional[asyncio.Event] = None,
                session: Optional[ServeSession] = None) -> ServeSession:
    """Run a live session until stop is set (or forever)."""
    if session is None:
        session = ServeSession(config, realtime_factor=realtime_factor)

    async def handler(ws):
        await _client_handler(session, ws)

    async with websockets.serve(handler, host, port):
        if ready is not None:
            ready.set()
        step_task = asyncio.create_task(session.run())
        try:
            if stop is None:
                await asyncio.Future()
            else:
                await stop.wait()
        finally:
            session.stopped = True
            step_task.cancel()
    return session

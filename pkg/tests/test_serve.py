import asyncio
import json
import time

import numpy as np
import pytest

from vmcsim import analysis, engine
from vmcsim.config import load_preset
from vmcsim.serve import SCHEMA_VERSION, ServeSession, build_snapshot, serve


def make_session(**over):
    cfg = load_preset("profile3", dict({"hand_script": None,
                                        "duration_cap": 30.0}, **over))
    return ServeSession(cfg, realtime_factor=4.0)


class TestMessages:
    def test_hello_handshake(self):
        s = make_session()
        reply = s.handle_message({"kind": "hello", "schema": SCHEMA_VERSION})
        assert reply["kind"] == "hello"
        assert reply["schema"] == SCHEMA_VERSION

    def test_schema_mismatch_rejected(self):
        s = make_session()
        with pytest.raises(ValueError, match="schema mismatch"):
            s.handle_message({"kind": "hello", "schema": 99})

    def test_hand_input_lands_in_mailbox(self):
        s = make_session()
        s.handle_message({"kind": "hand_input", "engaged": True,
                          "x": 0.1, "y": 0.2, "z": 0.15})
        pts = s.hand.sample(s.sim.t, s.sim)
        assert np.allclose(pts, [[0.1, 0.2, 0.15]])
        s.handle_message({"kind": "hand_input", "engaged": False})
        assert s.hand.sample(s.sim.t, s.sim) is None

    def test_control_start_pause_reset(self):
        s = make_session()
        assert s.paused
        s.handle_message({"kind": "control", "action": "start"})
        assert not s.paused
        s.handle_message({"kind": "control", "action": "pause"})
        assert s.paused
        s.sim.step()
        s.handle_message({"kind": "control", "action": "reset"})
        assert s.sim.step_idx == 0

    def test_unknown_kinds_rejected(self):
        s = make_session()
        with pytest.raises(ValueError):
            s.handle_message({"kind": "mystery"})
        with pytest.raises(ValueError):
            s.handle_message({"kind": "control", "action": "explode"})

    def test_profile_switch_applies_sigma(self):
        s = make_session()
        s.handle_message({"kind": "control", "action": "profile",
                          "profile": "profile1", "damper": True})
        assert s.sim.robots[0].hand_avoid_spec.width == pytest.approx(0.09)
        assert s.sim.robots[0].damper_spec is not None

    def test_profile_switch_rejected_mid_grasp(self):
        s = make_session()
        s.sim.robots[0].agent.grasped_block = 2
        with pytest.raises(ValueError, match="while a block is held"):
            s.handle_message({"kind": "control", "action": "profile",
                              "profile": "profile2"})


def test_snapshot_shape_and_monotone_time():
    s = make_session()
    s.start()
    times = []
    for _ in range(5):
        for _ in range(20):
            s.sim.step()
        snap = build_snapshot(s.sim, s.paused)
        assert snap["kind"] == "snapshot"
        assert snap["schema"] == SCHEMA_VERSION
        assert len(snap["agents"]) == 1
        assert "rho" in snap["agents"][0]
        times.append(snap["t"])
    assert times == sorted(times)
    assert len(set(times)) == len(times)


async def _cockpit_session():
    """Drive a hand toward the holding robot over a real socket, then check
    retreat, hand cadence and headless reproducibility."""
    import websockets

    cfg = load_preset("profile3", {"hand_script": None, "duration_cap": 30.0})
    session = ServeSession(cfg, realtime_factor=4.0)
    ready, stop = asyncio.Event(), asyncio.Event()
    task = asyncio.create_task(serve(cfg, 8899, ready=ready, stop=stop,
                                     session=session))
    await ready.wait()
    sent = []
    robot_positions = []
    async with websockets.connect("ws://127.0.0.1:8899") as ws:
        hello = json.loads(await ws.recv())
        assert hello["schema"] == SCHEMA_VERSION
        await ws.send(json.dumps({"kind": "control", "action": "start"}))
        t0 = time.monotonic()
        while time.monotonic() - t0 < 2.5:
            u = min(1.0, (time.monotonic() - t0) / 1.5)
            await ws.send(json.dumps({
                "kind": "hand_input", "engaged": True,
                "x": 0.5 - 0.45 * u, "y": 0.02, "z": 0.15}))
            sent.append(time.monotonic())
            try:
                while True:
                    m = json.loads(await asyncio.wait_for(ws.recv(), 0.005))
                    if m.get("kind") == "snapshot":
                        robot_positions.append(m["agents"][0]["x"])
            except asyncio.TimeoutError:
                pass
            await asyncio.sleep(max(0.0, 0.1 - (time.monotonic() - sent[-1])))
        await ws.send(json.dumps({"kind": "control", "action": "pause"}))
    stop.set()
    await task
    return cfg, session, sent, robot_positions


def test_cockpit_loop_over_socket():
    cfg, session, sent, robot_positions = asyncio.run(_cockpit_session())

    # hand messages at 10 Hz +/- 2 Hz while engaged
    gaps = np.diff(sent)
    assert 1 / 12 <= float(np.mean(gaps)) <= 1 / 8

    # the robot retreats from its hold point by at least 5 cm
    hold = np.array(cfg.hold_position)
    disp = max(float(np.linalg.norm(np.array(p) - hold))
               for p in robot_positions)
    assert disp >= 0.05

    # headless rerun with the recorded hand samples: identical metrics
    records = session.sim.records + [
        {"type": "end", "t": session.sim.t, "status": "capped"}]
    live = analysis.compute_metrics(records)
    rerun = engine.rerun_from_trace(records)
    assert rerun.metrics.d_min_rh == live.d_min_rh
    assert rerun.metrics.t_below_sp == live.t_below_sp

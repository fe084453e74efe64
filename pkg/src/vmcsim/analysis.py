"""Post-hoc metrics over simulation traces and the combinatorial
trajectory-conflict enumeration.

All geometry for conflict counting runs on an integer millimeter lattice so
the enumeration is exact (no float accumulation); boundary contacts and
collinear overlaps count as intersecting by convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy.stats import chi2 as chi2_dist

from .scenario import Layout
from .vec import norm

NEAR_MISS_DISTANCE = 0.1   # m
MM = 1000.0                # lattice scale for exact intersection tests


@dataclass
class SSMParams:
    v_h: float   # max human speed toward robot, m/s
    v_r: float   # max robot speed toward operator, m/s
    T_r: float   # controller reaction time, s
    T_s: float   # stopping time, s
    C: float     # intrusion distance, m
    Z_d: float   # sensing uncertainty, m
    Z_r: float   # robot pose uncertainty, m

    def __post_init__(self):
        for name in ("v_h", "v_r", "T_r", "T_s", "C", "Z_d", "Z_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


PAPER_SSM = SSMParams(v_h=0.8, v_r=0.3, T_r=0.08, T_s=0.15,
                      C=0.08, Z_d=0.02, Z_r=0.02)


def ssm_protective_distance(p: SSMParams) -> float:
    """Protective separation: human motion + robot reaction + stopping
    distance (approximated as v_r*T_s/2) + intrusion + uncertainty margins."""
    s_h = p.v_h * (p.T_r + p.T_s)
    s_r = p.v_r * p.T_r
    s_s = 0.5 * p.v_r * p.T_s
    return s_h + s_r + s_s + p.C + p.Z_d + p.Z_r


# ---------------------------------------------------------------------------
# segment geometry
# ---------------------------------------------------------------------------

def _to_lattice(p) -> tuple[int, int]:
    return (int(round(p[0] * MM)), int(round(p[1] * MM)))


def _orient(a, b, c) -> int:
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return (v > 0) - (v < 0)


def _on_segment(a, b, c) -> bool:
    return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))


def segments_intersect(p1, q1, p2, q2) -> bool:
    """Exact 2D closed-segment intersection; collinear overlap counts."""
    a, b, c, d = _to_lattice(p1), _to_lattice(q1), _to_lattice(p2), _to_lattice(q2)
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def segment_distance(p1, q1, p2, q2) -> float:
    """Minimum euclidean distance between two 2D segments (0 if they meet)."""
    p1, q1 = np.asarray(p1, float)[:2], np.asarray(q1, float)[:2]
    p2, q2 = np.asarray(p2, float)[:2], np.asarray(q2, float)[:2]
    if segments_intersect(p1, q1, p2, q2):
        return 0.0

    def point_seg(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
        return float(np.hypot(*(p - (a + t * ab))))

    return min(point_seg(p1, p2, q2), point_seg(q1, p2, q2),
               point_seg(p2, p1, q1), point_seg(q2, p1, q1))


# ---------------------------------------------------------------------------
# conflict enumeration
# ---------------------------------------------------------------------------

def _segment_tables(layout: Layout, block_ids, cell_ids):
    blocks = [layout.blocks[i].home[:2] for i in block_ids]
    cells = [layout.grid.cell_center(c)[:2] for c in cell_ids]
    nb, nc = len(blocks), len(cells)
    segs = [(b, c) for b in range(nb) for c in range(nc)]
    ns = len(segs)
    inter = np.zeros((ns, ns), dtype=bool)
    for i in range(ns):
        b1, c1 = segs[i]
        for j in range(i + 1, ns):
            b2, c2 = segs[j]
            hit = segments_intersect(blocks[b1], cells[c1], blocks[b2], cells[c2])
            inter[i, j] = inter[j, i] = hit
    distinct = np.zeros((ns, ns), dtype=bool)
    for i, (b1, c1) in enumerate(segs):
        for j, (b2, c2) in enumerate(segs):
            distinct[i, j] = b1 != b2 and c1 != c2
    return inter, distinct


def _count_tuples(mat: np.ndarray, n: int) -> int:
    """Ordered n-tuples of segment indices with every pair allowed by mat."""
    m = mat.astype(np.int64)
    if n == 2:
        return int(m.sum())
    if n == 3:
        return int((m * (m @ m)).sum())
    if n == 4:
        total = 0
        for s in range(m.shape[0]):
            idx = np.flatnonzero(m[s])
            sub = m[np.ix_(idx, idx)]
            total += int((sub * (sub @ sub)).sum())
        return total
    raise ValueError("n must be 2..4")


def conflict_probability(layout: Layout, n_robots: int,
                         block_ids: Optional[list[int]] = None,
                         cell_ids: Optional[list[int]] = None) -> Fraction:
    """Exact probability that at least one pair of simultaneous straight-line
    transfers intersects, over all assignments of distinct blocks to distinct
    cells (one transfer per robot, uniform random choices)."""
    if n_robots < 1:
        raise ValueError("n_robots must be >= 1")
    if n_robots == 1:
        return Fraction(0)
    block_ids = list(range(len(layout.blocks))) if block_ids is None else block_ids
    cell_ids = list(range(layout.grid.n_cells)) if cell_ids is None else cell_ids
    if len(block_ids) < n_robots or len(cell_ids) < n_robots:
        raise ValueError("not enough blocks or cells for the robot count")
    inter, distinct = _segment_tables(layout, block_ids, cell_ids)
    total = _count_tuples(distinct, n_robots)
    clear = _count_tuples(distinct & ~inter, n_robots)
    return Fraction(total - clear, total)


def monte_carlo_conflict(layout: Layout, n_robots: int, samples: int,
                         seed: int = 0, block_ids: Optional[list[int]] = None,
                         cell_ids: Optional[list[int]] = None
                         ) -> tuple[float, float]:
    """Independent sampling estimate of conflict_probability.

    Returns (estimate, standard error). Uses float geometry on the same
    segments, which agrees with the exact predicate away from boundary ties.
    """
    rng = np.random.default_rng(seed)
    block_ids = list(range(len(layout.blocks))) if block_ids is None else block_ids
    cell_ids = list(range(layout.grid.n_cells)) if cell_ids is None else cell_ids
    blocks = np.array([layout.blocks[i].home[:2] for i in block_ids])
    cells = np.array([layout.grid.cell_center(c)[:2] for c in cell_ids])
    nb, nc = len(blocks), len(cells)
    b_pick = np.argsort(rng.random((samples, nb)), axis=1)[:, :n_robots]
    c_pick = np.argsort(rng.random((samples, nc)), axis=1)[:, :n_robots]
    hit = np.zeros(samples, dtype=bool)
    for i in range(n_robots):
        for j in range(i + 1, n_robots):
            hit |= _vec_intersect(blocks[b_pick[:, i]], cells[c_pick[:, i]],
                                  blocks[b_pick[:, j]], cells[c_pick[:, j]])
    p = float(hit.mean())
    se = float(np.sqrt(max(p * (1 - p), 1e-12) / samples))
    return p, se


def _vec_intersect(p1, q1, p2, q2) -> np.ndarray:
    def orient(a, b, c):
        v = ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
             - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        return np.sign(v)

    def onseg(a, b, c):
        return ((np.minimum(a[:, 0], b[:, 0]) <= c[:, 0])
                & (c[:, 0] <= np.maximum(a[:, 0], b[:, 0]))
                & (np.minimum(a[:, 1], b[:, 1]) <= c[:, 1])
                & (c[:, 1] <= np.maximum(a[:, 1], b[:, 1])))

    o1, o2 = orient(p1, q1, p2), orient(p1, q1, q2)
    o3, o4 = orient(p2, q2, p1), orient(p2, q2, q1)
    hit = (o1 != o2) & (o3 != o4)
    hit |= (o1 == 0) & onseg(p1, q1, p2)
    hit |= (o2 == 0) & onseg(p1, q1, q2)
    hit |= (o3 == 0) & onseg(p2, q2, p1)
    hit |= (o4 == 0) & onseg(p2, q2, q1)
    return hit


# ---------------------------------------------------------------------------
# trace metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    completion_time: Optional[float]
    status: str
    d_min_rr: Optional[float]
    d_min_rh: Optional[float]
    t_below_sp: float
    t_cross: float
    t_nm: float
    priority_counts: dict
    stall_events: list = field(default_factory=list)
    mean_pairwise_min_rr: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "completion_time": self.completion_time, "status": self.status,
            "d_min_rr": self.d_min_rr, "d_min_rh": self.d_min_rh,
            "t_below_sp": self.t_below_sp, "t_cross": self.t_cross,
            "t_nm": self.t_nm,
            "priority_counts": {str(k): v for k, v in
                                sorted(self.priority_counts.items())},
            "stall_events": self.stall_events,
            "mean_pairwise_min_rr": self.mean_pairwise_min_rr,
        }


def _steps(records):
    return [r for r in records if r.get("type") == "step"]


def _events(records):
    return [r for r in records if r.get("type") == "event"]


def min_separations(records) -> tuple[Optional[float], Optional[float]]:
    """Smallest robot-robot end-effector distance and smallest robot-hand
    distance (over all hand keypoints) across the trace."""
    d_rr: Optional[float] = None
    d_rh: Optional[float] = None
    for rec in _steps(records):
        agents = rec["agents"]
        pos = [np.asarray(a["x"]) for a in agents]
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                d = norm(pos[i] - pos[j])
                d_rr = d if d_rr is None else min(d_rr, d)
        hands = rec.get("hands") or {}
        for pts in hands.values():
            for kp in pts or ():
                kp = np.asarray(kp)
                for p in pos:
                    d = norm(p - kp)
                    d_rh = d if d_rh is None else min(d_rh, d)
    return d_rr, d_rh


def pairwise_min_separations(records) -> dict[tuple[int, int], float]:
    """Per robot pair minimum end-effector distance."""
    mins: dict[tuple[int, int], float] = {}
    for rec in _steps(records):
        agents = rec["agents"]
        pos = [np.asarray(a["x"]) for a in agents]
        ids = [a["i"] for a in agents]
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                key = (ids[i], ids[j])
                d = norm(pos[i] - pos[j])
                mins[key] = min(mins.get(key, d), d)
    return mins


def violation_time(records, s_p: float) -> float:
    """Total time the closest robot-hand distance is below s_p, integrated
    over hand-present intervals."""
    if s_p <= 0:
        raise ValueError("s_p must be > 0")
    steps = _steps(records)
    total = 0.0
    for prev, cur in zip(steps, steps[1:]):
        hands = prev.get("hands") or {}
        kps = [kp for pts in hands.values() for kp in pts or ()]
        if not kps:
            continue
        pos = [np.asarray(a["x"]) for a in prev["agents"]]
        d = min(norm(p - np.asarray(kp)) for kp in kps for p in pos)
        if d < s_p:
            total += cur["t"] - prev["t"]
    return total


def crossing_and_near_miss(records) -> tuple[float, float]:
    """Accumulated overlap durations of simultaneous transfers whose ideal
    straight-line segments intersect (crossing) or pass within 0.1 m."""
    transfers: dict[int, list] = {}
    open_tr: dict[int, dict] = {}
    for ev in _events(records):
        if ev["kind"] == "transfer_start":
            open_tr[ev["robot"]] = {"t0": ev["t"], "segment": ev["segment"]}
        elif ev["kind"] == "transfer_end":
            tr = open_tr.pop(ev["robot"], None)
            if tr is not None:
                transfers.setdefault(ev["robot"], []).append(
                    (tr["t0"], ev["t"], tr["segment"]))
    t_cross = 0.0
    t_nm = 0.0
    robots = sorted(transfers)
    for a_idx in range(len(robots)):
        for b_idx in range(a_idx + 1, len(robots)):
            for t0a, t1a, sa in transfers[robots[a_idx]]:
                for t0b, t1b, sb in transfers[robots[b_idx]]:
                    overlap = min(t1a, t1b) - max(t0a, t0b)
                    if overlap <= 0:
                        continue
                    if segments_intersect(sa[0], sa[1], sb[0], sb[1]):
                        t_cross += overlap
                    elif segment_distance(sa[0], sa[1],
                                          sb[0], sb[1]) < NEAR_MISS_DISTANCE:
                        t_nm += overlap
    return t_cross, t_nm


def stall_event_summary(records) -> list[dict]:
    """Pair stall detections with the grant that resolved them."""
    out = []
    pending: Optional[dict] = None
    for ev in _events(records):
        if ev["kind"] == "stall_detected" and pending is None:
            pending = {"detected_at": ev["t"], "robot": ev["robot"],
                       "resolved_at": None, "winner": None}
        elif ev["kind"] == "priority_granted":
            if pending is None:
                pending = {"detected_at": ev["t"], "robot": ev.get("robot"),
                           "resolved_at": None, "winner": None}
            pending["resolved_at"] = ev["t"]
            pending["winner"] = ev["winner"]
            out.append(pending)
            pending = None
    if pending is not None:
        out.append(pending)
    return out


def fairness_report(priority_counts: dict) -> dict:
    """Counts per robot plus a chi-square uniformity statistic."""
    counts = np.array([priority_counts[k] for k in sorted(priority_counts)],
                      dtype=float)
    n = counts.sum()
    k = len(counts)
    if n == 0 or k < 2:
        return {"counts": {str(i): int(c) for i, c in
                           zip(sorted(priority_counts), counts)},
                "chi2": 0.0, "p_value": 1.0}
    expected = n / k
    stat = float(((counts - expected) ** 2 / expected).sum())
    p = float(chi2_dist.sf(stat, k - 1))
    return {"counts": {str(i): int(c) for i, c in
                       zip(sorted(priority_counts), counts)},
            "chi2": stat, "p_value": p}


def compute_metrics(records, s_p: Optional[float] = None) -> MetricsRecord:
    """Derive the full metrics record from a trace."""
    s_p = ssm_protective_distance(PAPER_SSM) if s_p is None else s_p
    steps = _steps(records)
    events = _events(records)
    status = "capped"
    for rec in records:
        if rec.get("type") == "end":
            status = rec["status"]
    completion = None
    places = [ev["t"] for ev in events
              if ev["kind"] in ("place", "human_place")]
    header = records[0] if records and records[0].get("type") == "header" else {}
    n_blocks = len(header.get("layout", {}).get("blocks", [])) or None
    if places and (n_blocks is None or len(places) >= n_blocks):
        completion = max(places)
    d_rr, d_rh = min_separations(records)
    pair_mins = pairwise_min_separations(records)
    mean_pair = (float(np.mean(list(pair_mins.values())))
                 if pair_mins else None)
    t_cross, t_nm = crossing_and_near_miss(records)
    counts: dict[int, int] = {}
    if steps:
        last_pri = steps[-1].get("pri") or {}
        counts = {int(k): v for k, v in (last_pri.get("c") or {}).items()}
    return MetricsRecord(
        completion_time=completion, status=status,
        d_min_rr=d_rr, d_min_rh=d_rh,
        t_below_sp=violation_time(records, s_p),
        t_cross=t_cross, t_nm=t_nm,
        priority_counts=counts,
        stall_events=stall_event_summary(records),
        mean_pairwise_min_rr=mean_pair)

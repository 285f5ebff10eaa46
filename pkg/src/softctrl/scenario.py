"""Closed-loop scenes: data model, JSON file format and a synthetic generator.

A scene is a fixed-length log (10 Hz, 250 frames by default) holding the
expert ego trajectory, log-playback tracks for the other agents and a small
vector map of lanes (with per-frame signal states) and crosswalks.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kinematics as kin
from .errors import DegenerateTarget, InvariantViolation, ParseError
from .geometry import box_corners, boxes_overlap

FORMAT = "softctrl-scene-v1"
AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist")
MAP_KINDS = ("lane", "crosswalk")
SIGNAL_NONE, SIGNAL_GREEN, SIGNAL_RED = 0, 1, 2
SCENE_KINDS = ("red_light_lead", "t_junction", "crossing_pedestrian")


@dataclass(eq=False)
class AgentTrack:
    id: str
    kind: str
    extent: tuple
    poses: np.ndarray  # (num_frames, 3)
    present: np.ndarray  # (num_frames,) bool

    def speeds(self) -> np.ndarray:
        """Per-frame speed magnitude from log displacement (frame 0 uses 0->1)."""
        d = np.hypot(*np.diff(self.poses[:, :2], axis=0).T)
        if len(d) == 0:
            return np.zeros(len(self.poses))
        return np.concatenate([[d[0]], d])


@dataclass(eq=False)
class MapElement:
    kind: str
    points: np.ndarray  # (P, 2)
    signal: Optional[np.ndarray] = None  # (num_frames,) ints, lanes only


@dataclass(eq=False)
class Scenario:
    id: str
    num_frames: int
    ego_log: np.ndarray  # (num_frames, 3)
    ego_extent: tuple = (4.5, 1.9)
    agents: list = field(default_factory=list)
    map: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "id": self.id,
            "num_frames": int(self.num_frames),
            "ego_extent": [float(v) for v in self.ego_extent],
            "ego_log": [[float(v) for v in row] for row in self.ego_log],
            "agents": [
                {
                    "id": a.id,
                    "class": a.kind,
                    "extent": [float(v) for v in a.extent],
                    "frames": [
                        [float(p[0]), float(p[1]), float(p[2]), int(bool(flag))]
                        for p, flag in zip(a.poses, a.present)
                    ],
                }
                for a in self.agents
            ],
            "map": [_map_element_dict(m) for m in self.map],
        }

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def ego_pose(self, frame: int) -> kin.Pose:
        x, y, th = self.ego_log[frame]
        return kin.Pose(float(x), float(y), float(th))

    def speed_at(self, frame: int) -> float:
        """Ego speed entering ``frame``; frame 0 takes the 0->1 displacement."""
        if self.num_frames < 2:
            return 0.0
        if frame == 0:
            return kin.signed_displacement(self.ego_pose(0), self.ego_pose(1))
        return kin.signed_displacement(self.ego_pose(frame - 1), self.ego_pose(frame))

    def lanes(self):
        return [m for m in self.map if m.kind == "lane"]

    def crosswalks(self):
        return [m for m in self.map if m.kind == "crosswalk"]


def _map_element_dict(m: MapElement) -> dict:
    d = {"kind": m.kind, "points": [[float(x), float(y)] for x, y in m.points]}
    if m.signal is not None:
        d["signal"] = [int(v) for v in m.signal]
    return d


# ---------------------------------------------------------------------------
# serialisation


def dumps(s: Scenario) -> str:
    """Serialise with one frame per line so diagnostics can point at lines."""
    d = s.to_dict()
    dump = lambda v: json.dumps(v, separators=(", ", ": "))  # noqa: E731
    out = ["{"]
    for key in ("format", "id", "num_frames", "ego_extent"):
        out.append(f' "{key}": {dump(d[key])},')
    out.append(' "ego_log": [')
    out.append(",\n".join(f"  {dump(row)}" for row in d["ego_log"]))
    out.append(" ],")
    out.append(' "agents": [')
    agent_blocks = []
    for a in d["agents"]:
        head = f'  {{"id": {dump(a["id"])}, "class": {dump(a["class"])}, "extent": {dump(a["extent"])}, "frames": ['
        rows = ",\n".join(f"   {dump(r)}" for r in a["frames"])
        agent_blocks.append(f"{head}\n{rows}\n  ]}}")
    out.append(",\n".join(agent_blocks))
    out.append(" ],")
    out.append(' "map": [')
    out.append(",\n".join(f"  {dump(m)}" for m in d["map"]))
    out.append(" ]")
    out.append("}")
    return "\n".join(line for line in out if line) + "\n"


def save(s: Scenario, path) -> None:
    Path(path).write_text(dumps(s), encoding="utf-8")


def load(path) -> Scenario:
    return loads(Path(path).read_text(encoding="utf-8"))


def loads(text: str) -> Scenario:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    s = from_dict(d)
    validate(s)
    return s


def _require(d, key, types, path):
    if not isinstance(d, dict) or key not in d:
        raise ParseError("missing required key", field=f"{path}{key}")
    value = d[key]
    if not isinstance(value, types) or isinstance(value, bool) and bool not in _as_tuple(types):
        raise ParseError(f"expected {types}, got {type(value).__name__}", field=f"{path}{key}")
    return value


def _as_tuple(types):
    return types if isinstance(types, tuple) else (types,)


def _float_rows(rows, width, path):
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise ParseError("expected an array of numeric rows", field=path) from None
    if arr.ndim != 2 or arr.shape[1] != width:
        if len(rows) == 0 and width:
            return np.zeros((0, width))
        raise ParseError(f"expected rows of length {width}", field=path)
    return arr


def from_dict(d: dict) -> Scenario:
    fmt = _require(d, "format", str, "")
    if fmt != FORMAT:
        raise ParseError(f"unsupported format {fmt!r}", field="format")
    sid = _require(d, "id", str, "")
    n = _require(d, "num_frames", int, "")
    ego_extent = _float_rows([_require(d, "ego_extent", list, "")], 2, "ego_extent")[0]
    ego_log = _float_rows(_require(d, "ego_log", list, ""), 3, "ego_log")
    agents = []
    for i, a in enumerate(_require(d, "agents", list, "")):
        p = f"agents[{i}]."
        frames = _float_rows(_require(a, "frames", list, p), 4, p + "frames")
        kind = _require(a, "class", str, p)
        if kind not in AGENT_CLASSES:
            raise ParseError(f"unknown agent class {kind!r}", field=p + "class")
        agents.append(
            AgentTrack(
                id=str(_require(a, "id", (str, int), p)),
                kind=kind,
                extent=tuple(_float_rows([_require(a, "extent", list, p)], 2, p + "extent")[0]),
                poses=frames[:, :3].copy(),
                present=frames[:, 3] > 0.5,
            )
        )
    elements = []
    for i, m in enumerate(_require(d, "map", list, "")):
        p = f"map[{i}]."
        kind = _require(m, "kind", str, p)
        if kind not in MAP_KINDS:
            raise ParseError(f"unknown map element kind {kind!r}", field=p + "kind")
        signal = None
        if "signal" in m:
            raw = _require(m, "signal", list, p)
            if any(not isinstance(v, int) or v not in (0, 1, 2) for v in raw):
                raise ParseError("signal codes must be 0, 1 or 2", field=p + "signal")
            signal = np.array(raw, dtype=int)
        elements.append(MapElement(kind, _float_rows(_require(m, "points", list, p), 2, p + "points"), signal))
    return Scenario(sid, n, ego_log, tuple(ego_extent), agents, elements)


def validate(s: Scenario) -> None:
    n = s.num_frames
    if n < 2:
        raise InvariantViolation("num_frames >= 2", f"got {n}")
    if len(s.ego_log) != n:
        raise InvariantViolation("ego_log length = num_frames", f"{len(s.ego_log)} != {n}")
    if min(s.ego_extent) <= 0:
        raise InvariantViolation("ego extent positive")
    dth = kin.wrap_angle(np.diff(s.ego_log[:, 2]))
    if np.any(np.abs(dth) >= math.pi / 2):
        raise InvariantViolation("consecutive ego headings differ by < pi/2")
    for a in s.agents:
        if len(a.poses) != n or len(a.present) != n:
            raise InvariantViolation(
                "agent track length = num_frames", f"agent {a.id}: {len(a.poses)} != {n}"
            )
        if a.present.any() and min(a.extent) <= 0:
            raise InvariantViolation("agent extent positive on present frames", f"agent {a.id}")
    for i, m in enumerate(s.map):
        if len(m.points) < 2:
            raise InvariantViolation("polyline has >= 2 points", f"map[{i}]")
        if np.any(np.all(np.diff(m.points, axis=0) == 0, axis=1)):
            raise InvariantViolation("consecutive polyline points distinct", f"map[{i}]")
        if m.signal is not None:
            if m.kind != "lane":
                raise InvariantViolation("only lanes carry signals", f"map[{i}]")
            if len(m.signal) != n:
                raise InvariantViolation("signal length = num_frames", f"map[{i}]")


# ---------------------------------------------------------------------------
# expert actions


def ego_speeds(s: Scenario) -> np.ndarray:
    """Signed ego speed at every frame (frame 0 takes the 0->1 displacement)."""
    log = s.ego_log
    lx, ly, lth = kin.to_local_arrays(log[:-1, 0], log[:-1, 1], log[:-1, 2], log[1:, 0], log[1:, 1], log[1:, 2])
    _, disp = kin.inverse_arrays(0.0, lx, ly, lth)
    return np.concatenate([disp[:1], disp])


def expert_actions(s: Scenario) -> np.ndarray:
    """(num_frames - 1, 2) array of [steer, accel] reproducing ``ego_log`` exactly."""
    log = s.ego_log
    v = ego_speeds(s)
    lx, ly, lth = kin.to_local_arrays(log[:-1, 0], log[:-1, 1], log[:-1, 2], log[1:, 0], log[1:, 1], log[1:, 2])
    steer, accel = kin.inverse_arrays(v[:-1], lx, ly, lth)
    return np.stack([steer, accel], axis=1)


def replay(s: Scenario, actions: np.ndarray, v_max=math.inf) -> np.ndarray:
    """Open-loop rollout of ``actions`` from frame 0; returns (num_frames, 3) poses."""
    out = np.empty((len(actions) + 1, 3))
    x, y, th = s.ego_log[0]
    v = ego_speeds(s)[0]
    out[0] = x, y, th
    for t, (steer, accel) in enumerate(actions):
        x, y, th, v = kin.forward_arrays(x, y, th, v, steer, accel, v_max)
        out[t + 1] = x, y, th
    return out


# ---------------------------------------------------------------------------
# synthetic generator

EGO_EXTENT = (4.5, 1.9)
LANE_WIDTH = 3.5
COMFORT_ACCEL = 0.012  # m/frame^2, i.e. 1.2 m/s^2, under the discomfort threshold


def _ramp(v_from, v_to, rate):
    """Accelerations taking speed from v_from to v_to at |rate| per frame, ending exactly."""
    steps = []
    v = v_from
    sign = 1.0 if v_to > v_from else -1.0
    while abs(v_to - v) > rate:
        steps.append(sign * rate)
        v += sign * rate
    if v != v_to:
        steps.append(v_to - v)
    return steps


def _pad(accels, n, value=0.0):
    accels = list(accels)[:n]
    return np.array(accels + [value] * (n - len(accels)))


def _rollout(x0, y0, th0, v0, steers, accels):
    """Poses of a unicycle driven by (steers, accels); len(steers) + 1 rows."""
    poses = np.empty((len(accels) + 1, 3))
    x, y, th, v = x0, y0, th0, v0
    poses[0] = x, y, th
    for k, (st, ac) in enumerate(zip(steers, accels)):
        x, y, th, v = kin.forward_arrays(x, y, th, v, st, ac)
        poses[k + 1] = x, y, th
    return poses


def _straight_track(x0, y0, heading, speed, n, start=0):
    """Constant-velocity poses; frame ``start`` sits at (x0, y0)."""
    t = np.arange(n) - start
    return np.stack(
        [x0 + speed * t * math.cos(heading), y0 + speed * t * math.sin(heading), np.full(n, kin.wrap_angle(heading))],
        axis=1,
    )


def _line(p0, p1, spacing=10.0):
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    count = max(2, int(math.ceil(np.hypot(*(p1 - p0)) / spacing)) + 1)
    return np.linspace(p0, p1, count)


def _crosswalk(cx, cy, along, across, heading=0.0):
    return box_corners(cx, cy, heading, along, across)


def _distance_travelled(accels, v0):
    return float(np.sum(v0 + np.cumsum(accels)))


class _Builder:
    def __init__(self, kind, seed, num_frames):
        self.kind = kind
        self.seed = seed
        self.n = num_frames
        self.rng = np.random.default_rng([seed, SCENE_KINDS.index(kind)])
        self.agents = []
        self.map = []
        self.ego_log = None

    def add_agent(self, kind, extent, poses, present=None, required=False):
        if present is None:
            present = np.ones(self.n, dtype=bool)
        track = AgentTrack(f"{kind[:3]}{len(self.agents):02d}", kind, tuple(float(e) for e in extent), poses, present)
        if self._hits_ego(track):
            if required:
                raise AssertionError(f"archetype agent {track.id} collides with the expert")
            return None
        self.agents.append(track)
        return track

    def _hits_ego(self, track):
        ego_l, ego_w = EGO_EXTENT
        for t in np.flatnonzero(track.present):
            ex, ey, eth = self.ego_log[t]
            ax, ay, ath = track.poses[t]
            if math.hypot(ax - ex, ay - ey) > 8.0:
                continue
            if boxes_overlap(box_corners(ex, ey, eth, ego_l, ego_w), box_corners(ax, ay, ath, *track.extent)):
                return True
        return False

    def vehicle_extent(self):
        return (float(self.rng.uniform(4.2, 5.0)), float(self.rng.uniform(1.8, 2.0)))

    def entry_window(self, poses, region_x, region_y):
        """Present only while inside an axis-aligned region, so agents enter mid-segment."""
        inside = (
            (poses[:, 0] >= region_x[0]) & (poses[:, 0] <= region_x[1])
            & (poses[:, 1] >= region_y[0]) & (poses[:, 1] <= region_y[1])
        )
        return inside

    def finish(self):
        self.agents = [a for a in self.agents if a.present.any()]
        s = Scenario(f"{self.kind}_{self.seed:04d}", self.n, self.ego_log, EGO_EXTENT, self.agents, self.map)
        validate(s)
        return s


def _add_background(b: _Builder, road_x, target_count):
    """Oncoming traffic, parked cars and sidewalk pedestrians along an east-west road."""
    rng = b.rng
    n = b.n
    while len(b.agents) < target_count:
        choice = rng.integers(3)
        if choice == 0:
            speed = rng.uniform(0.5, 0.9)
            x_at_entry = road_x[1] + rng.uniform(0, 60)
            entry = int(rng.integers(0, n // 2))
            poses = _straight_track(x_at_entry, LANE_WIDTH, math.pi, speed, n, start=entry)
            present = b.entry_window(poses, road_x, (-50, 50))
            b.add_agent("vehicle", b.vehicle_extent(), poses, present)
        elif choice == 1:
            x = rng.uniform(road_x[0] + 20, road_x[1] - 20)
            poses = _straight_track(x, -LANE_WIDTH + 0.3, 0.0, 0.0, n)
            b.add_agent("vehicle", b.vehicle_extent(), poses)
        else:
            speed = rng.uniform(0.08, 0.15)
            heading = 0.0 if rng.random() < 0.5 else math.pi
            x = rng.uniform(road_x[0], road_x[1])
            poses = _straight_track(x, -6.0 - rng.uniform(0, 1), heading, speed, n, start=int(rng.integers(n)))
            kind = "pedestrian" if rng.random() < 0.8 else "cyclist"
            extent = (0.6, 0.6) if kind == "pedestrian" else (1.8, 0.6)
            b.add_agent(kind, extent, poses)


def _gen_red_light_lead(b: _Builder):
    rng, n = b.rng, b.n
    v_cruise = rng.uniform(0.7, 0.9)
    cruise_frames = int(rng.integers(25, 45))
    wait_frames = int(rng.integers(50, 80))
    brake = rng.uniform(0.010, 0.013)
    delay = int(rng.integers(5, 12))

    brake_steps = _ramp(v_cruise, 0.0, brake)
    ego_acc = [0.0] * cruise_frames + brake_steps + [0.0] * wait_frames + [0.0] * delay
    ego_acc += _ramp(0.0, v_cruise, COMFORT_ACCEL)
    ego_acc = _pad(ego_acc, n - 1)
    b.ego_log = _rollout(0.0, 0.0, 0.0, v_cruise, np.zeros(n - 1), ego_acc)
    stop_frame = cruise_frames + len(brake_steps)
    ego_stop_x = b.ego_log[stop_frame, 0]

    lead_ext = b.vehicle_extent()
    gap = rng.uniform(2.5, 4.0)
    lead_stop_x = ego_stop_x + 0.5 * EGO_EXTENT[0] + 0.5 * lead_ext[0] + gap
    lead_cruise = cruise_frames - int(rng.integers(3, 8))
    lead_acc = [0.0] * lead_cruise + brake_steps + [0.0] * (wait_frames + (cruise_frames - lead_cruise))
    lead_acc += _ramp(0.0, v_cruise, COMFORT_ACCEL)
    lead_acc = _pad(lead_acc, n - 1)
    to_stop = _distance_travelled(lead_acc[: lead_cruise + len(brake_steps)], v_cruise)
    lead = _rollout(lead_stop_x - to_stop, 0.0, 0.0, v_cruise, np.zeros(n - 1), lead_acc)
    b.add_agent("vehicle", lead_ext, lead, required=True)

    stop_line = lead_stop_x + 0.5 * lead_ext[0] + 1.5
    green_frame = stop_frame + wait_frames - (cruise_frames - lead_cruise)
    signal = np.where(np.arange(n) < green_frame, SIGNAL_RED, SIGNAL_GREEN)
    x_int = stop_line + 4.0 + LANE_WIDTH
    road = (-60.0, max(300.0, float(b.ego_log[-1, 0]) + 60.0))
    b.map.append(MapElement("lane", _line((road[0], 0.0), (road[1], 0.0)), signal))
    b.map.append(MapElement("lane", _line((road[1], LANE_WIDTH), (road[0], LANE_WIDTH)), signal.copy()))
    cross_signal = np.where(signal == SIGNAL_RED, SIGNAL_GREEN, SIGNAL_RED)
    b.map.append(MapElement("lane", _line((x_int + 1.75, -80), (x_int + 1.75, 80)), cross_signal))
    b.map.append(MapElement("lane", _line((x_int - 1.75, 80), (x_int - 1.75, -80)), cross_signal.copy()))
    b.map.append(MapElement("crosswalk", _crosswalk(stop_line + 2.0, 1.75, 3.0, 14.0)))

    # cross traffic passes the junction while the ego waits at the red light
    for k in range(int(rng.integers(1, 3))):
        speed = rng.uniform(0.6, 0.9)
        t_mid = stop_frame + int(rng.integers(5, max(6, wait_frames - 15)))
        north = rng.random() < 0.5
        heading = math.pi / 2 if north else -math.pi / 2
        x = x_int + (1.75 if north else -1.75)
        poses = _straight_track(x, 0.0, heading, speed, n, start=t_mid)
        b.add_agent("vehicle", b.vehicle_extent(), poses, b.entry_window(poses, (-1e9, 1e9), (-60, 60)))
    _add_background(b, road, int(rng.integers(4, 11)))


def _gen_t_junction(b: _Builder):
    rng, n = b.rng, b.n
    v_cruise = rng.uniform(0.65, 0.85)
    v_turn = rng.uniform(0.4, 0.5)
    approach = int(rng.integers(40, 70))
    turn_frames = int(rng.integers(24, 34))
    steer = (math.pi / 2) / turn_frames

    slow = _ramp(v_cruise, v_turn, COMFORT_ACCEL)
    speed_up = _ramp(v_turn, v_cruise, COMFORT_ACCEL)
    acc = [0.0] * approach + slow + [0.0] * turn_frames + speed_up
    steers = [0.0] * (approach + len(slow)) + [steer] * turn_frames
    acc, steers = _pad(acc, n - 1), _pad(steers, n - 1)
    b.ego_log = _rollout(0.0, 0.0, 0.0, v_cruise, steers, acc)
    turn_start = approach + len(slow)
    turn_end = turn_start + turn_frames
    x_side = float(b.ego_log[turn_end, 0])
    y_mouth = float(b.ego_log[turn_start, 1])

    road = (-60.0, x_side + 150.0)
    b.map.append(MapElement("lane", _line((road[0], 0.0), (road[1], 0.0))))
    b.map.append(MapElement("lane", _line((road[1], LANE_WIDTH), (road[0], LANE_WIDTH))))
    connector = b.ego_log[max(0, turn_start - 10): turn_end + 10: 3, :2]
    north_end = (x_side, max(float(b.ego_log[-1, 1]) + 60.0, 150.0))
    b.map.append(MapElement("lane", np.vstack([connector, _line(b.ego_log[turn_end + 10, :2], north_end)[1:]])))
    b.map.append(MapElement("lane", _line((x_side - LANE_WIDTH, north_end[1]), (x_side - LANE_WIDTH, y_mouth + 8.0))))
    b.map.append(MapElement("crosswalk", _crosswalk(x_side - 1.75, y_mouth + 7.0, 3.0, 9.0, math.pi / 2)))

    # through traffic ahead that keeps going straight (the other legal continuation)
    lead_speed = v_cruise + rng.uniform(0.05, 0.15)
    lead = _straight_track(rng.uniform(18.0, 28.0), 0.0, 0.0, lead_speed, n)
    b.add_agent("vehicle", b.vehicle_extent(), lead, b.entry_window(lead, road, (-50, 50)), required=True)

    # oncoming vehicle that clears the junction before the turn
    t_clear = turn_start - int(rng.integers(15, 30))
    onc_speed = rng.uniform(0.6, 0.9)
    onc = _straight_track(x_side - 10.0, LANE_WIDTH, math.pi, onc_speed, n, start=max(t_clear, 0))
    b.add_agent("vehicle", b.vehicle_extent(), onc, b.entry_window(onc, road, (-50, 50)))

    # side-road vehicle waiting at the junction mouth, leaving once the ego has turned
    ext = b.vehicle_extent()
    wait_y = y_mouth + 10.0 + 0.5 * ext[0]
    leave = turn_end + int(rng.integers(20, 40))
    acc_side = _pad([0.0] * leave + _ramp(0.0, 0.6, COMFORT_ACCEL), n - 1)
    side = _rollout(x_side - LANE_WIDTH, wait_y, -math.pi / 2, 0.0, np.zeros(n - 1), acc_side)
    side_present = side[:, 1] > y_mouth + 4.0
    b.add_agent("vehicle", ext, side, side_present)
    _add_background(b, road, int(rng.integers(5, 11)))


def _gen_crossing_pedestrian(b: _Builder):
    rng, n = b.rng, b.n
    v_cruise = rng.uniform(0.6, 0.85)
    cruise_frames = int(rng.integers(30, 55))
    brake = rng.uniform(0.010, 0.013)
    brake_steps = _ramp(v_cruise, 0.0, brake)
    stop_frame = cruise_frames + len(brake_steps)

    ped_speed = rng.uniform(0.11, 0.15)
    ped_y0, ped_y1 = -6.0, LANE_WIDTH + 4.5
    ped_start = stop_frame - int(rng.integers(10, 25))
    clear_frame = ped_start + int(math.ceil((2.0 - ped_y0) / ped_speed))
    wait = max(5, clear_frame - stop_frame + int(rng.integers(3, 10)))

    acc = [0.0] * cruise_frames + brake_steps + [0.0] * wait + _ramp(0.0, v_cruise, COMFORT_ACCEL)
    acc = _pad(acc, n - 1)
    b.ego_log = _rollout(0.0, 0.0, 0.0, v_cruise, np.zeros(n - 1), acc)
    stop_x = float(b.ego_log[stop_frame, 0])
    x_cw = stop_x + 0.5 * EGO_EXTENT[0] + rng.uniform(3.0, 4.5) + 1.5
    road = (-60.0, float(b.ego_log[-1, 0]) + 80.0)

    b.map.append(MapElement("lane", _line((road[0], 0.0), (road[1], 0.0))))
    b.map.append(MapElement("lane", _line((road[1], LANE_WIDTH), (road[0], LANE_WIDTH))))
    b.map.append(MapElement("crosswalk", _crosswalk(x_cw, 1.75, 3.0, 14.0)))

    t = np.arange(n)
    ped_y = np.clip(ped_y0 + ped_speed * (t - ped_start), ped_y0, ped_y1)
    ped = np.stack([np.full(n, x_cw + rng.uniform(-0.5, 0.5)), ped_y, np.full(n, math.pi / 2)], axis=1)
    b.add_agent("pedestrian", (0.6, 0.6), ped, required=True)

    # follower that brakes with the ego, a rear-collision hazard for hard stops
    follow_gap = rng.uniform(9.0, 13.0)
    follower = b.ego_log.copy()
    follower[:, 0] -= follow_gap
    b.add_agent("vehicle", b.vehicle_extent(), follower, required=True)
    _add_background(b, road, int(rng.integers(4, 11)))


_GENERATORS = {
    "red_light_lead": _gen_red_light_lead,
    "t_junction": _gen_t_junction,
    "crossing_pedestrian": _gen_crossing_pedestrian,
}


GENERATOR_FRAMES = 250


def truncate(s: Scenario, num_frames: int) -> Scenario:
    """The first ``num_frames`` frames of a scene; agents absent throughout are dropped."""
    n = int(num_frames)
    agents = [
        AgentTrack(a.id, a.kind, a.extent, a.poses[:n].copy(), a.present[:n].copy())
        for a in s.agents if a.present[:n].any()
    ]
    elements = [MapElement(m.kind, m.points, None if m.signal is None else m.signal[:n].copy()) for m in s.map]
    out = Scenario(s.id, n, s.ego_log[:n].copy(), s.ego_extent, agents, elements)
    validate(out)
    return out


def generate(kind: str, seed: int, num_frames: int = 250) -> Scenario:
    """Deterministic synthetic scene of the given archetype.

    Archetypes are laid out over at least 250 frames; shorter requests get the
    leading part of that scene, so the defining event may fall outside it.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    if num_frames < 2:
        raise ValueError("num_frames must be at least 2")
    b = _Builder(kind, int(seed), max(int(num_frames), GENERATOR_FRAMES))
    _GENERATORS[kind](b)
    s = b.finish()
    return s if s.num_frames == num_frames else truncate(s, num_frames)


def bundled_suite() -> list:
    """The 12-scene evaluation suite: four seeds of each archetype."""
    return [generate(kind, seed) for kind in SCENE_KINDS for seed in range(4)]


def check_expert_feasible(s: Scenario, config: kin.KinematicsConfig = kin.KinematicsConfig()) -> None:
    """Raise unless every consecutive ego pose pair maps to an in-bound action."""
    try:
        acts = expert_actions(s)
    except DegenerateTarget as exc:
        raise InvariantViolation("expert actions well-posed", str(exc)) from None
    bounds = config.action_bounds
    if np.any(np.abs(acts) > bounds + 1e-12):
        raise InvariantViolation("expert actions within action bounds")
    if np.any(np.abs(ego_speeds(s)) > config.v_max + 1e-12):
        raise InvariantViolation("expert speed within v_max")

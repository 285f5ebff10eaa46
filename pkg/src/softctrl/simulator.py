"""Closed-loop log-playback environment.

The ego is driven by the unicycle model while every other agent replays its
logged track. Each step returns an ego-relative observation vector, the
weighted imitation/safety reward and the collision class (front, side or
rear) of the first overlapping agent.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import kinematics as kin
from .errors import OutOfRange, SteppedAfterDone
from .geometry import box_corners, boxes_overlap
from .scenario import Scenario, ego_speeds

COLLISION_CLASSES = ("front", "side", "rear")
REWARD_TERMS = ("r_dist", "r_yaw", "r_cf", "r_cs", "r_cr")


@dataclass(frozen=True)
class ObservationLayout:
    history: int = 5
    agents: int = 8
    lanes: int = 6
    lane_points: int = 5
    lane_spacing: float = 5.0
    crosswalks: int = 2
    crosswalk_points: int = 5

    AGENT_FEATURES = 8  # rel x, rel y, cos, sin, speed, length, width, presence

    @property
    def ego_dim(self) -> int:
        return 4 * self.history + 1

    @property
    def agent_dim(self) -> int:
        return self.AGENT_FEATURES * self.agents

    @property
    def lane_dim(self) -> int:
        return self.lanes * (3 * self.lane_points + 3)

    @property
    def crosswalk_dim(self) -> int:
        return self.crosswalks * 3 * self.crosswalk_points

    @property
    def dim(self) -> int:
        return self.ego_dim + self.agent_dim + self.lane_dim + self.crosswalk_dim

    def blocks(self) -> dict:
        edges = np.cumsum([0, self.ego_dim, self.agent_dim, self.lane_dim, self.crosswalk_dim])
        names = ("ego", "agents", "lanes", "crosswalks")
        return {name: slice(int(a), int(b)) for name, a, b in zip(names, edges[:-1], edges[1:])}

    def feature_scale(self) -> np.ndarray:
        """Fixed per-feature multipliers bringing metres and radians to O(1) network inputs."""
        pos = 1.0 / 20.0
        ego = np.tile([pos, pos, 1.0, 1.0], self.history).tolist() + [1.0]
        agent = np.tile([pos, pos, 1.0, 1.0, 1.0, 0.2, 0.5, 1.0], self.agents).tolist()
        lane = np.tile(np.tile([pos, pos, 1.0], self.lane_points).tolist() + [1.0, 1.0, 1.0], self.lanes).tolist()
        cw = np.tile([pos, pos, 1.0], self.crosswalk_points * self.crosswalks).tolist()
        return np.array(ego + agent + lane + cw)


@dataclass(frozen=True)
class RewardWeights:
    dist: float = 1.0
    yaw: float = 1.0
    cf: float = 20.0
    cs: float = 20.0
    cr: float = 20.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dist, self.yaw, self.cf, self.cs, self.cr])


@dataclass(frozen=True)
class SimConfig:
    kinematics: kin.KinematicsConfig = field(default_factory=kin.KinematicsConfig)
    layout: ObservationLayout = field(default_factory=ObservationLayout)
    weights: RewardWeights = field(default_factory=RewardWeights)
    dist_clip: float = 20.0
    min_horizon: int = 2
    front_bearing: float = math.pi / 4
    rear_bearing: float = 3 * math.pi / 4


class RewardTerms(NamedTuple):
    r_dist: float
    r_yaw: float
    r_cf: float
    r_cs: float
    r_cr: float


class Box(NamedTuple):
    x: float
    y: float
    theta: float
    length: float
    width: float
    id: str = ""


@dataclass(frozen=True)
class CollisionEvent:
    frame: int
    cls: str
    other_agent: str


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    reward_terms: RewardTerms
    collision: Optional[str]
    done: bool
    ego: kin.EgoState
    action: kin.Action
    event: Optional[CollisionEvent] = None


# ---------------------------------------------------------------------------
# reward and collisions


def compute_reward(ego: kin.EgoState, gt: kin.Pose, collision: Optional[str] = None,
                   weights: RewardWeights = RewardWeights(), dist_clip: float = 20.0):
    """Weighted imitation + safety reward; returns (total, RewardTerms)."""
    d = math.hypot(ego.pose.x - gt.x, ego.pose.y - gt.y)
    r_dist = -min(d, dist_clip)
    r_yaw = -abs(kin.wrap_angle(ego.pose.theta - gt.theta))
    terms = RewardTerms(
        r_dist,
        r_yaw,
        -1.0 if collision == "front" else 0.0,
        -1.0 if collision == "side" else 0.0,
        -1.0 if collision == "rear" else 0.0,
    )
    return weighted_sum(terms, weights), terms


def weighted_sum(terms: RewardTerms, weights: RewardWeights) -> float:
    w = weights
    return (
        w.dist * terms.r_dist
        + w.yaw * terms.r_yaw
        + w.cf * terms.r_cf
        + w.cs * terms.r_cs
        + w.cr * terms.r_cr
    )


def classify_bearing(ego: Box, other_x: float, other_y: float,
                     front=math.pi / 4, rear=3 * math.pi / 4) -> str:
    lx, ly, _ = kin.to_local_arrays(ego.x, ego.y, ego.theta, other_x, other_y, 0.0)
    bearing = abs(math.atan2(ly, lx))
    if bearing <= front:
        return "front"
    if bearing >= rear:
        return "rear"
    return "side"


def detect_collision(ego: Box, others: Sequence[Box], frame: int = 0,
                     front=math.pi / 4, rear=3 * math.pi / 4) -> Optional[CollisionEvent]:
    """First overlapping box in ``others`` (list order), classified by bearing."""
    ego_corners = None
    reach = 0.5 * math.hypot(ego.length, ego.width)
    for other in others:
        if math.hypot(other.x - ego.x, other.y - ego.y) > reach + 0.5 * math.hypot(other.length, other.width):
            continue
        if ego_corners is None:
            ego_corners = box_corners(ego.x, ego.y, ego.theta, ego.length, ego.width)
        if boxes_overlap(ego_corners, box_corners(other.x, other.y, other.theta, other.length, other.width)):
            return CollisionEvent(frame, classify_bearing(ego, other.x, other.y, front, rear), other.id)
    return None


# ---------------------------------------------------------------------------
# observation


class SceneArrays:
    """Scenario data re-packed as arrays for fast per-frame queries."""

    def __init__(self, s: Scenario):
        self.scenario = s
        n = s.num_frames
        self.agent_ids = [a.id for a in s.agents]
        count = len(s.agents)
        self.agent_poses = np.zeros((count, n, 3))
        self.agent_present = np.zeros((count, n), dtype=bool)
        self.agent_speed = np.zeros((count, n))
        self.agent_extent = np.zeros((count, 2))
        for i, a in enumerate(s.agents):
            self.agent_poses[i] = a.poses
            self.agent_present[i] = a.present
            self.agent_speed[i] = a.speeds()
            self.agent_extent[i] = a.extent
        self.lanes = [m.points for m in s.lanes()]
        self.lane_signal = np.array(
            [np.zeros(n, dtype=int) if m.signal is None else m.signal for m in s.lanes()], dtype=int
        ).reshape(len(self.lanes), n)
        self.crosswalks = [m.points for m in s.crosswalks()]
        self.ego_speeds = ego_speeds(s)
        self.lane_segments = _SegmentSet(self.lanes)
        self.crosswalk_segments = _SegmentSet([np.vstack([c, c[:1]]) for c in self.crosswalks])


class _SegmentSet:
    """All segments of several polylines, stacked for one-shot distance queries."""

    def __init__(self, polylines):
        self.count = len(polylines)
        if not polylines:
            return
        starts = [p[:-1] for p in polylines]
        ends = [p[1:] for p in polylines]
        self.starts = np.vstack(starts)
        self.seg = np.vstack(ends) - self.starts
        self.seg_len = np.hypot(self.seg[:, 0], self.seg[:, 1])
        self.seg_len2 = self.seg_len ** 2
        sizes = np.array([len(s) for s in starts])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.cum = [np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(p, axis=0).T))]) for p in polylines]
        # arc length at the start of each stacked segment
        self.seg_arc = np.concatenate([c[:-1] for c in self.cum])

    def query(self, x, y):
        """Per-polyline (min distance, arc length of the closest point)."""
        rx = x - self.starts[:, 0]
        ry = y - self.starts[:, 1]
        t = (rx * self.seg[:, 0] + ry * self.seg[:, 1]) / np.maximum(self.seg_len2, 1e-300)
        t = np.minimum(np.maximum(t, 0.0), 1.0)
        d = np.hypot(rx - t * self.seg[:, 0], ry - t * self.seg[:, 1])
        dmin = np.minimum.reduceat(d, self.offsets)
        arcs = np.empty(self.count)
        for k, (lo, best) in enumerate(zip(self.offsets, dmin)):
            hi = self.offsets[k + 1] if k + 1 < self.count else len(d)
            i = lo + int(np.argmax(d[lo:hi] == best))
            arcs[k] = self.seg_arc[i] + t[i] * self.seg_len[i]
        return dmin, arcs


def scene_arrays(s: Scenario) -> SceneArrays:
    cached = getattr(s, "_arrays", None)
    if cached is None:
        cached = SceneArrays(s)
        s._arrays = cached
    return cached


def build_observation(arrays: SceneArrays, layout: ObservationLayout, frame: int,
                      pose: kin.Pose, speed: float, history: Sequence) -> np.ndarray:
    """Ego-relative feature vector.

    ``history`` holds past poses, most recent first, as (x, y, theta, present)
    tuples; missing slots are zero-filled with presence 0.
    """
    obs = np.zeros(layout.dim)
    blocks = layout.blocks()
    px, py, pth = pose.x, pose.y, pose.theta

    ego = obs[blocks["ego"]]
    hist = list(history)[: layout.history]
    if hist:
        h = np.array(hist, dtype=float)
        lx, ly, lth = kin.to_local_arrays(px, py, pth, h[:, 0], h[:, 1], h[:, 2])
        rows = np.stack([lx, ly, lth, h[:, 3]], axis=1) * h[:, 3:4]
        ego[: 4 * len(hist)] = rows.ravel()
    ego[-1] = speed

    # agents: K nearest present, stable order on ties
    ab = obs[blocks["agents"]].reshape(layout.agents, layout.AGENT_FEATURES)
    if len(arrays.agent_ids):
        present = np.flatnonzero(arrays.agent_present[:, frame])
        if len(present):
            poses = arrays.agent_poses[present, frame]
            lx, ly, lth = kin.to_local_arrays(px, py, pth, poses[:, 0], poses[:, 1], poses[:, 2])
            dist = np.hypot(lx, ly)
            order = np.argsort(dist, kind="stable")[: layout.agents]
            k = len(order)
            ab[:k, 0] = lx[order]
            ab[:k, 1] = ly[order]
            ab[:k, 2] = np.cos(lth[order])
            ab[:k, 3] = np.sin(lth[order])
            ab[:k, 4] = arrays.agent_speed[present[order], frame]
            ab[:k, 5:7] = arrays.agent_extent[present[order]]
            ab[:k, 7] = 1.0

    # lanes: M nearest polylines, P points sampled forward from the projection
    lb = obs[blocks["lanes"]].reshape(layout.lanes, 3 * layout.lane_points + 3)
    c, s = math.cos(pth), math.sin(pth)
    if arrays.lane_segments.count:
        dists, arcs = arrays.lane_segments.query(px, py)
        order = np.argsort(dists, kind="stable")[: layout.lanes]
        offsets = np.arange(layout.lane_points) * layout.lane_spacing
        for row, li in zip(lb, order):
            cum = arrays.lane_segments.cum[li]
            line = arrays.lanes[li]
            pos = arcs[li] + offsets
            ok = (pos <= cum[-1]).astype(float)
            gx = np.interp(pos, cum, line[:, 0]) - px
            gy = np.interp(pos, cum, line[:, 1]) - py
            row[0: 3 * layout.lane_points: 3] = (c * gx + s * gy) * ok
            row[1: 3 * layout.lane_points: 3] = (-s * gx + c * gy) * ok
            row[2: 3 * layout.lane_points: 3] = ok
            row[3 * layout.lane_points + int(arrays.lane_signal[li, frame])] = 1.0

    cb = obs[blocks["crosswalks"]].reshape(layout.crosswalks, 3 * layout.crosswalk_points)
    if arrays.crosswalk_segments.count:
        dists, _ = arrays.crosswalk_segments.query(px, py)
        order = np.argsort(dists, kind="stable")[: layout.crosswalks]
        for row, ci in zip(cb, order):
            pts = arrays.crosswalks[ci][: layout.crosswalk_points]
            k = len(pts)
            gx = pts[:, 0] - px
            gy = pts[:, 1] - py
            row[0: 3 * k: 3] = c * gx + s * gy
            row[1: 3 * k: 3] = -s * gx + c * gy
            row[2: 3 * k: 3] = 1.0
    return obs


def log_history(s: Scenario, frame: int, length: int):
    """Logged ego poses before ``frame`` (most recent first), padded with frame 0 marked absent."""
    out = []
    for k in range(1, length + 1):
        t = frame - k
        if t >= 0:
            out.append((*s.ego_log[t], 1.0))
        else:
            out.append((*s.ego_log[0], 0.0))
    return out


# ---------------------------------------------------------------------------
# environment


class DrivingEnv:
    """Single-owner closed-loop environment over one immutable Scenario."""

    def __init__(self, scenario: Scenario, config: SimConfig = SimConfig()):
        self.scenario = scenario
        self.config = config
        self.arrays = scene_arrays(scenario)
        self.frame = None
        self.ego = None
        self.done = True
        self.trace = []
        self._history = []

    @property
    def observation_dim(self) -> int:
        return self.config.layout.dim

    def reset(self, start_frame: int = 0) -> np.ndarray:
        s = self.scenario
        if start_frame < 0 or start_frame + self.config.min_horizon > s.num_frames:
            raise OutOfRange(f"start_frame {start_frame} invalid for {s.num_frames} frames")
        self.frame = int(start_frame)
        self.ego = kin.EgoState(s.ego_pose(start_frame), float(self.arrays.ego_speeds[start_frame]))
        self._history = log_history(s, start_frame, self.config.layout.history)
        self.done = False
        self.trace = []
        return self.observe()

    def observe(self) -> np.ndarray:
        return build_observation(
            self.arrays, self.config.layout, self.frame, self.ego.pose, self.ego.speed, self._history
        )

    def agent_boxes(self, frame: int):
        a = self.arrays
        idx = np.flatnonzero(a.agent_present[:, frame]) if len(a.agent_ids) else []
        return [
            Box(*a.agent_poses[i, frame], *a.agent_extent[i], a.agent_ids[i]) for i in idx
        ]

    def ego_box(self) -> Box:
        p = self.ego.pose
        return Box(p.x, p.y, p.theta, *self.scenario.ego_extent, "ego")

    def step(self, action) -> StepOutcome:
        if self.done:
            raise SteppedAfterDone("environment must be reset before stepping again")
        cfg = self.config
        if not isinstance(action, kin.Action):
            action = kin.Action(float(action[0]), float(action[1]))
        action = action.clamped(cfg.kinematics)
        prev = self.ego.pose
        self.ego = kin.step_forward(self.ego, action, cfg.kinematics.v_max)
        self._history = [(prev.x, prev.y, prev.theta, 1.0)] + self._history[:-1]
        self.frame += 1
        event = detect_collision(
            self.ego_box(), self.agent_boxes(self.frame), self.frame, cfg.front_bearing, cfg.rear_bearing
        )
        cls = event.cls if event else None
        reward, terms = compute_reward(
            self.ego, self.scenario.ego_pose(self.frame), cls, cfg.weights, cfg.dist_clip
        )
        self.done = self.frame >= self.scenario.num_frames - 1
        p = self.ego.pose
        self.trace.append(
            (self.frame, p.x, p.y, p.theta, self.ego.speed, action.steer, action.accel,
             terms.r_dist, terms.r_yaw, cls or "")
        )
        return StepOutcome(self.observe(), reward, terms, cls, self.done, self.ego, action, event)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "x", "y", "theta", "speed", "steer", "accel", "r_dist", "r_yaw", "collision_class"])
            for row in self.trace:
                w.writerow([row[0], *(repr(float(v)) for v in row[1:9]), row[9]])

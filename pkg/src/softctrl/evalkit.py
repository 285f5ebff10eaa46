"""Closed-loop evaluation: imitation, off-road, collision and comfort metrics.

Every scene is driven from its first to its last frame without intervention.
Per-scene results are aggregated into scene-normalized means and event
counts, and exported as CSV plus a JSON summary.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LengthMismatch
from .geometry import point_polyline_distance, points_polyline_distance
from .scenario import Scenario, expert_actions
from .simulator import COLLISION_CLASSES, DrivingEnv, SimConfig

D2R_EVENT_M = 4.0
DISCOMFORT_MS2 = 2.0
# commanded accel is in m/frame^2; dividing by dt^2 can land a hair below an
# exactly representable threshold (0.02 / 0.01 -> 1.9999999999999998)
THRESHOLD_SLACK = 1e-9

SUMMARY_KEYS = (
    "mu_ade", "mu_d2r", "d2r_ge_4m", "mu_cl", "cl_ge_1", "mu_acc", "acc_ge_2", "failure",
    "mu_cf", "mu_cr", "mu_cs", "cf_ge_1", "cr_ge_1", "cs_ge_1",
)


def ade(pred, gt) -> float:
    """Mean per-frame L2 distance between two (T, >=2) position sequences."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if len(pred) != len(gt):
        raise LengthMismatch(f"trajectories have {len(pred)} and {len(gt)} frames")
    if len(pred) == 0:
        return 0.0
    return float(np.mean(np.hypot(pred[:, 0] - gt[:, 0], pred[:, 1] - gt[:, 1])))


def d2r(point, polyline) -> float:
    """Distance from a point to the nearest segment of the reference polyline."""
    poly = np.asarray(polyline, dtype=float)[:, :2]
    if len(poly) < 2:
        raise ValueError("reference polyline needs at least 2 points")
    return float(point_polyline_distance(np.asarray(point, dtype=float)[:2], poly))


def d2r_event(distance: float) -> bool:
    return distance > D2R_EVENT_M


def accel_ms2(accel_per_frame, dt: float = 0.1):
    return np.asarray(accel_per_frame, dtype=float) / (dt * dt)


def discomfort_flags(accel_ms2_seq) -> np.ndarray:
    a = np.abs(np.asarray(accel_ms2_seq, dtype=float))
    return a >= DISCOMFORT_MS2 - THRESHOLD_SLACK


def discomfort(accel_ms2_seq) -> float:
    """Fraction of frames whose |acceleration| reaches 2 m/s^2."""
    flags = discomfort_flags(accel_ms2_seq)
    return float(flags.mean()) if flags.size else 0.0


@dataclass
class SceneResult:
    scenario_id: str
    frames: int
    ade: float
    d2r_mean: float
    d2r_max: float
    d2r_event: bool
    cf: int
    cs: int
    cr: int
    cl: int
    cf_event: bool
    cs_event: bool
    cr_event: bool
    cl_event: bool
    discomfort_rate: float
    acc_event: bool
    failure: bool
    total_reward: float

    @classmethod
    def from_rollout(cls, scenario_id, positions, log_positions, reference, collisions, accel_ms2_seq,
                     total_reward=0.0) -> "SceneResult":
        """Build from per-frame arrays of one rollout.

        ``collisions`` holds one entry per stepped frame: a class name or ''.
        """
        positions = np.asarray(positions, dtype=float)
        dists = points_polyline_distance(positions, np.asarray(reference, dtype=float)[:, :2]) \
            if len(positions) else np.zeros(0)
        counts = {c: sum(1 for x in collisions if x == c) for c in COLLISION_CLASSES}
        cl = sum(1 for x in collisions if x)
        d2r_max = float(np.max(dists)) if len(dists) else 0.0
        flags = discomfort_flags(accel_ms2_seq)
        ev = d2r_event(d2r_max)
        return cls(
            scenario_id=scenario_id,
            frames=len(positions),
            ade=ade(positions, log_positions),
            d2r_mean=float(np.mean(dists)) if len(dists) else 0.0,
            d2r_max=d2r_max,
            d2r_event=ev,
            cf=counts["front"], cs=counts["side"], cr=counts["rear"], cl=cl,
            cf_event=counts["front"] > 0, cs_event=counts["side"] > 0, cr_event=counts["rear"] > 0,
            cl_event=cl > 0,
            discomfort_rate=float(flags.mean()) if flags.size else 0.0,
            acc_event=bool(flags.any()),
            failure=ev or cl > 0,
            total_reward=float(total_reward),
        )


@dataclass
class EvalReport:
    scenes: list

    def __len__(self):
        return len(self.scenes)

    def _mean(self, attr):
        n = len(self.scenes)
        return sum(getattr(s, attr) for s in self.scenes) / n if n else 0.0

    def _count(self, attr):
        return sum(1 for s in self.scenes if getattr(s, attr))

    def summary(self) -> dict:
        return {
            "mu_ade": self._mean("ade"),
            "mu_d2r": self._mean("d2r_mean"),
            "d2r_ge_4m": self._count("d2r_event"),
            "mu_cl": self._mean("cl"),
            "cl_ge_1": self._count("cl_event"),
            "mu_acc": self._mean("discomfort_rate"),
            "acc_ge_2": self._count("acc_event"),
            "failure": self._count("failure"),
            "mu_cf": self._mean("cf"),
            "mu_cr": self._mean("cr"),
            "mu_cs": self._mean("cs"),
            "cf_ge_1": self._count("cf_event"),
            "cr_ge_1": self._count("cr_event"),
            "cs_ge_1": self._count("cs_event"),
        }

    @property
    def failures(self) -> int:
        return self._count("failure")

    @property
    def mean_return(self) -> float:
        return self._mean("total_reward")

    @property
    def discomfort_rate(self) -> float:
        return self._mean("discomfort_rate")

    def to_csv(self) -> str:
        names = [f.name for f in fields(SceneResult)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(names)
        for s in self.scenes:
            w.writerow([_fmt(v) for v in asdict(s).values()])
        agg = self.summary()
        row = {n: "" for n in names}
        row.update(
            scenario_id="ALL", frames=sum(s.frames for s in self.scenes), ade=agg["mu_ade"],
            d2r_mean=agg["mu_d2r"], d2r_max=max((s.d2r_max for s in self.scenes), default=0.0),
            d2r_event=agg["d2r_ge_4m"], cf=agg["mu_cf"], cs=agg["mu_cs"], cr=agg["mu_cr"], cl=agg["mu_cl"],
            cf_event=agg["cf_ge_1"], cs_event=agg["cs_ge_1"], cr_event=agg["cr_ge_1"], cl_event=agg["cl_ge_1"],
            discomfort_rate=agg["mu_acc"], acc_event=agg["acc_ge_2"], failure=agg["failure"],
            total_reward=self.mean_return,
        )
        w.writerow([_fmt(row[n]) for n in names])
        return buf.getvalue()

    def to_json(self) -> str:
        data = {"num_scenes": len(self.scenes), **self.summary()}
        return json.dumps(data, indent=2, sort_keys=False) + "\n"

    def write(self, out_dir, stem: str = "eval") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(self.to_csv())
        (out / f"{stem}.json").write_text(self.to_json())


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# agents used for evaluation


class ExpertAgent:
    """Replays the inverse-dynamics expert actions of each scene."""

    def __init__(self):
        self._cache = {}

    def act(self, observations, envs):
        out = np.zeros((len(envs), 2))
        for i, env in enumerate(envs):
            key = id(env.scenario)
            if key not in self._cache:
                self._cache[key] = expert_actions(env.scenario)
            out[i] = self._cache[key][env.frame]
        return out


class ConstantAgent:
    def __init__(self, steer: float = 0.0, accel: float = 0.0):
        self.action = np.array([steer, accel], dtype=float)

    def act(self, observations, envs):
        return np.tile(self.action, (len(envs), 1))


class PolicyAgent:
    """Deterministic wrapper around a network with a batched ``mean_action``-like call."""

    def __init__(self, fn, bounds=None):
        self.fn = fn
        self.bounds = None if bounds is None else np.asarray(bounds, dtype=float)

    def act(self, observations, envs):
        a = np.asarray(self.fn(observations), dtype=float)
        if self.bounds is not None:
            a = np.clip(a, -self.bounds, self.bounds)
        return a


def evaluate(agent, scenarios: Sequence[Scenario], seed: int = 0, config: SimConfig = SimConfig()) -> EvalReport:
    """Full-segment rollouts of every scene, stepped in lockstep with batched actions.

    ``agent.act(observations, envs)`` returns one action row per live env.
    Stochastic agents may draw from ``agent.rng``, reseeded from ``seed``.
    """
    if hasattr(agent, "reseed"):
        agent.reseed(seed)
    envs = [DrivingEnv(s, config) for s in scenarios]
    obs = [env.reset(0) for env in envs]
    positions = [[] for _ in envs]
    collisions = [[] for _ in envs]
    accels = [[] for _ in envs]
    returns = [0.0] * len(envs)
    live = [i for i, env in enumerate(envs) if not env.done]
    while live:
        batch = np.array([obs[i] for i in live])
        actions = agent.act(batch, [envs[i] for i in live])
        for row, i in enumerate(live):
            out = envs[i].step(actions[row])
            obs[i] = out.observation
            positions[i].append((out.ego.pose.x, out.ego.pose.y))
            collisions[i].append(out.collision or "")
            accels[i].append(out.action.accel)
            returns[i] += out.reward
        live = [i for i in live if not envs[i].done]
    dt = config.kinematics.dt
    results = []
    for i, (env, s) in enumerate(zip(envs, scenarios)):
        log_pos = s.ego_log[1: 1 + len(positions[i]), :2]
        results.append(SceneResult.from_rollout(
            s.id, np.array(positions[i]).reshape(-1, 2), log_pos, s.ego_log, collisions[i],
            accel_ms2(accels[i], dt), returns[i],
        ))
    return EvalReport(results)


def summary_is_consistent(report: EvalReport) -> bool:
    """Stored means equal a fresh recomputation from the per-scene rows."""
    n = len(report.scenes)
    s = report.summary()
    expect = {
        "mu_ade": sum(r.ade for r in report.scenes) / n,
        "mu_cl": sum(r.cl for r in report.scenes) / n,
        "mu_acc": sum(r.discomfort_rate for r in report.scenes) / n,
    }
    return all(math.isclose(s[k], v, rel_tol=0, abs_tol=0) for k, v in expect.items())

"""Unicycle forward model and its closed-form inverse.

Time is counted in frames (``dt`` seconds each), so speeds are metres per
frame and accelerations metres per frame squared. The forward update turns
the heading by ``steer`` first and then moves by the *new* speed along the
*new* heading; this is the update under which the closed-form inverse

    steer = theta_local
    accel = eta * hypot(x_local, y_local) - v_old,   eta = +1 if x cos(theta) > 0 else -1

recovers the applied action exactly.

The array helpers (``forward_arrays``, ``inverse_arrays``, ...) broadcast over
numpy arrays and are what the simulator and the tests use in bulk; the
dataclass functions are thin wrappers for single states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTarget

TWO_PI = 2.0 * math.pi


def wrap_angle(theta):
    """Map angles into (-pi, pi]. Works on floats and arrays."""
    wrapped = math.pi - np.mod(math.pi - np.asarray(theta, dtype=float), TWO_PI)
    wrapped = np.where(wrapped <= -math.pi, math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class KinematicsConfig:
    dt: float = 0.1
    v_max: float = 1.7
    steer_max: float = 0.3
    accel_max: float = 0.06

    def __post_init__(self):
        if not 0.0 < self.steer_max < math.pi / 2:
            raise ConfigError(f"steer_max must lie in (0, pi/2), got {self.steer_max}")
        if self.accel_max <= 0 or self.v_max <= 0 or self.dt <= 0:
            raise ConfigError("dt, v_max and accel_max must be positive")

    @property
    def action_bounds(self) -> np.ndarray:
        return np.array([self.steer_max, self.accel_max])


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class EgoState:
    pose: Pose
    speed: float


@dataclass(frozen=True)
class Action:
    steer: float
    accel: float

    def as_array(self) -> np.ndarray:
        return np.array([self.steer, self.accel])

    def clamped(self, config: KinematicsConfig) -> "Action":
        return Action(
            float(np.clip(self.steer, -config.steer_max, config.steer_max)),
            float(np.clip(self.accel, -config.accel_max, config.accel_max)),
        )


@dataclass(frozen=True)
class LocalPose:
    """A target pose expressed in a source pose's frame."""

    x: float
    y: float
    theta: float


def forward_arrays(x, y, theta, speed, steer, accel, v_max=math.inf):
    theta_new = wrap_angle(np.asarray(theta) + steer)
    speed_new = np.clip(np.asarray(speed) + accel, -v_max, v_max)
    return (
        x + speed_new * np.cos(theta_new),
        y + speed_new * np.sin(theta_new),
        theta_new,
        speed_new,
    )


def to_local_arrays(sx, sy, stheta, tx, ty, ttheta):
    dx = np.asarray(tx) - sx
    dy = np.asarray(ty) - sy
    c, s = np.cos(stheta), np.sin(stheta)
    return c * dx + s * dy, -s * dx + c * dy, wrap_angle(np.asarray(ttheta) - stheta)


def to_global_arrays(sx, sy, stheta, lx, ly, ltheta):
    c, s = np.cos(stheta), np.sin(stheta)
    return sx + c * lx - s * ly, sy + s * lx + c * ly, wrap_angle(np.asarray(ltheta) + stheta)


def inverse_arrays(speed, lx, ly, ltheta):
    """Vectorised inverse dynamics; raises DegenerateTarget on any |theta| >= pi/2."""
    ltheta = np.asarray(ltheta, dtype=float)
    if np.any(np.abs(ltheta) >= math.pi / 2):
        raise DegenerateTarget("target heading change must satisfy |theta| < pi/2")
    eta = np.where(lx * np.cos(ltheta) > 0, 1.0, -1.0)
    return ltheta.copy(), eta * np.hypot(lx, ly) - speed


def step_forward(state: EgoState, action: Action, v_max: float = KinematicsConfig.v_max) -> EgoState:
    x, y, th, v = forward_arrays(
        state.pose.x, state.pose.y, state.pose.theta, state.speed, action.steer, action.accel, v_max
    )
    return EgoState(Pose(float(x), float(y), float(th)), float(v))


def to_local(source: Pose, target: Pose) -> LocalPose:
    x, y, th = to_local_arrays(source.x, source.y, source.theta, target.x, target.y, target.theta)
    return LocalPose(float(x), float(y), float(th))


def to_global(source: Pose, local: LocalPose) -> Pose:
    x, y, th = to_global_arrays(source.x, source.y, source.theta, local.x, local.y, local.theta)
    return Pose(float(x), float(y), float(th))


def inverse_action(state: EgoState, target: LocalPose) -> Action:
    """Closed-form action moving ``state`` onto ``target``.

    The result is deliberately not clamped to the action bounds so that
    ``inverse_action(s, to_local(s.pose, step_forward(s, a).pose)) == a``.
    """
    steer, accel = inverse_arrays(state.speed, target.x, target.y, target.theta)
    return Action(float(steer), float(accel))


def signed_displacement(prev: Pose, cur: Pose) -> float:
    """Speed that carried the ego from ``prev`` to ``cur`` (negative when reversing)."""
    local = to_local(prev, cur)
    return inverse_action(EgoState(prev, 0.0), local).accel

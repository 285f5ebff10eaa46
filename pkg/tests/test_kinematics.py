import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softctrl import kinematics as kin
from softctrl.errors import ConfigError, DegenerateTarget

angles = st.floats(-10.0, 10.0, allow_nan=False)
coords = st.floats(-1e3, 1e3, allow_nan=False)


def test_straight_acceleration_from_rest():
    out = kin.step_forward(kin.EgoState(kin.Pose(0, 0, 0), 0.0), kin.Action(0.0, 0.05))
    assert (out.pose.x, out.pose.y, out.pose.theta) == (0.05, 0.0, 0.0)
    assert out.speed == 0.05


@given(coords, coords, angles)
def test_zero_action_at_rest_is_fixed_point(x, y, th):
    s = kin.EgoState(kin.Pose(x, y, kin.wrap_angle(th)), 0.0)
    out = kin.step_forward(s, kin.Action(0.0, 0.0))
    assert out == s


def test_zero_action_moves_when_speed_nonzero():
    s = kin.EgoState(kin.Pose(0, 0, 0), 0.3)
    assert kin.step_forward(s, kin.Action(0.0, 0.0)).pose != s.pose


def test_forward_matches_hand_derivation():
    # (1, 2, 0.3, v=0.4) with (0.1, 0.02): theta' = 0.4, v' = 0.42
    out = kin.step_forward(kin.EgoState(kin.Pose(1.0, 2.0, 0.3), 0.4), kin.Action(0.1, 0.02))
    assert out.pose.theta == pytest.approx(0.4, abs=1e-15)
    assert out.speed == pytest.approx(0.42, abs=1e-15)
    assert out.pose.x == pytest.approx(1.0 + 0.42 * math.cos(0.4), abs=1e-15)
    assert out.pose.y == pytest.approx(2.0 + 0.42 * math.sin(0.4), abs=1e-15)
    # equivalently a local displacement (v' cos steer, v' sin steer)
    local = kin.to_local(kin.Pose(1.0, 2.0, 0.3), out.pose)
    assert local.x == pytest.approx(0.42 * math.cos(0.1), abs=1e-14)
    assert local.y == pytest.approx(0.42 * math.sin(0.1), abs=1e-14)


def test_speed_is_clamped_after_update():
    out = kin.step_forward(kin.EgoState(kin.Pose(0, 0, 0), 1.68), kin.Action(0.0, 0.06), v_max=1.7)
    assert out.speed == 1.7
    out = kin.step_forward(kin.EgoState(kin.Pose(0, 0, 0), -1.68), kin.Action(0.0, -0.06), v_max=1.7)
    assert out.speed == -1.7


def test_inverse_straight_target_from_rest():
    a = kin.inverse_action(kin.EgoState(kin.Pose(0, 0, 0), 0.0), kin.LocalPose(0.7, 0.0, 0.0))
    assert (a.steer, a.accel) == (0.0, 0.7)


def test_inverse_zero_displacement_cancels_speed():
    a = kin.inverse_action(kin.EgoState(kin.Pose(0, 0, 0), 0.3), kin.LocalPose(0.0, 0.0, 0.2))
    assert a.steer == 0.2
    assert a.accel == pytest.approx(-0.3, abs=1e-15)


def test_inverse_rejects_degenerate_heading():
    s = kin.EgoState(kin.Pose(0, 0, 0), 0.0)
    with pytest.raises(DegenerateTarget):
        kin.inverse_action(s, kin.LocalPose(1.0, 0.0, math.pi / 2))
    with pytest.raises(DegenerateTarget):
        kin.inverse_action(s, kin.LocalPose(1.0, 0.0, -2.0))


def test_inverse_is_not_clamped():
    a = kin.inverse_action(kin.EgoState(kin.Pose(0, 0, 0), 0.0), kin.LocalPose(5.0, 0.0, 1.0))
    assert a.steer == 1.0 and a.accel == 5.0


def test_round_trip_vectorised_1e5():
    rng = np.random.default_rng(0)
    n = 100_000
    x, y = rng.uniform(-500, 500, (2, n))
    th = rng.uniform(-math.pi, math.pi, n)
    v = rng.uniform(-1.7, 1.7, n)
    steer = rng.uniform(-0.3, 0.3, n)
    accel = rng.uniform(-0.06, 0.06, n)
    x2, y2, th2, _ = kin.forward_arrays(x, y, th, v, steer, accel)
    lx, ly, lth = kin.to_local_arrays(x, y, th, x2, y2, th2)
    s_hat, a_hat = kin.inverse_arrays(v, lx, ly, lth)
    # a tiny |v'| makes the direction of travel numerically meaningless; the
    # recovered accel is then still exact because eta * |v'| ~ 0
    assert np.max(np.abs(s_hat - steer)) <= 1e-9
    assert np.max(np.abs(a_hat - accel)) <= 1e-9


@settings(max_examples=300)
@given(coords, coords, angles, st.floats(-1.7, 1.7), st.floats(-0.3, 0.3), st.floats(-0.06, 0.06))
def test_round_trip_scalar(x, y, th, v, steer, accel):
    s = kin.EgoState(kin.Pose(x, y, kin.wrap_angle(th)), v)
    a = kin.Action(steer, accel)
    out = kin.step_forward(s, a, v_max=math.inf)
    back = kin.inverse_action(s, kin.to_local(s.pose, out.pose))
    assert abs(back.steer - steer) <= 1e-9
    assert abs(back.accel - accel) <= 1e-9


def test_eta_sign_follows_new_speed():
    rng = np.random.default_rng(1)
    for _ in range(2000):
        v = rng.uniform(-1.7, 1.7)
        a = kin.Action(rng.uniform(-0.3, 0.3), rng.uniform(-0.06, 0.06))
        s = kin.EgoState(kin.Pose(*rng.uniform(-5, 5, 2), rng.uniform(-3, 3)), v)
        out = kin.step_forward(s, a, v_max=math.inf)
        if abs(out.speed) < 1e-9:
            continue
        local = kin.to_local(s.pose, out.pose)
        eta = 1.0 if local.x * math.cos(local.theta) > 0 else -1.0
        assert eta == math.copysign(1.0, out.speed)


def test_to_local_identity_and_rotation():
    p = kin.Pose(3.0, -2.0, 1.1)
    assert kin.to_local(p, p) == kin.LocalPose(0.0, 0.0, 0.0)
    lp = kin.to_local(kin.Pose(0, 0, math.pi / 2), kin.Pose(0, 1, math.pi / 2))
    assert lp.x == pytest.approx(1.0, abs=1e-15)
    assert lp.y == pytest.approx(0.0, abs=1e-15)
    assert lp.theta == 0.0


def test_to_global_inverts_to_local():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        src = kin.Pose(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
        tgt = kin.Pose(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
        back = kin.to_global(src, kin.to_local(src, tgt))
        assert abs(back.x - tgt.x) <= 1e-12 and abs(back.y - tgt.y) <= 1e-12
        assert abs(kin.wrap_angle(back.theta - tgt.theta)) <= 1e-12


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range(theta):
    w = kin.wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)


def test_wrap_angle_boundaries():
    assert kin.wrap_angle(math.pi) == math.pi
    assert kin.wrap_angle(-math.pi) == math.pi
    assert kin.wrap_angle(3 * math.pi) == pytest.approx(math.pi)


@given(coords, coords, angles, st.floats(-1.7, 1.7), st.floats(-0.3, 0.3), st.floats(-0.06, 0.06))
def test_heading_normalised_after_step(x, y, th, v, steer, accel):
    out = kin.step_forward(kin.EgoState(kin.Pose(x, y, th), v), kin.Action(steer, accel))
    assert -math.pi < out.pose.theta <= math.pi


def test_config_rejects_steer_at_right_angle():
    with pytest.raises(ConfigError):
        kin.KinematicsConfig(steer_max=math.pi / 2)
    np.testing.assert_array_equal(kin.KinematicsConfig().action_bounds, [0.3, 0.06])


def test_action_clamped():
    a = kin.Action(1.0, -1.0).clamped(kin.KinematicsConfig())
    assert (a.steer, a.accel) == (0.3, -0.06)

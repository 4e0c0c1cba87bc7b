import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowerreach.core import (ArmState, ControlInput, FullState, ModelParams, Rotation,
                              ValidationError, integrate_rotation, rotate, wrap_angle)

unit = st.floats(-1.0, 1.0, allow_nan=False)
coord = st.floats(-100.0, 100.0, allow_nan=False)


@st.composite
def rotations(draw):
    q = np.array([draw(unit), draw(unit), draw(unit), draw(unit)])
    if np.linalg.norm(q) < 1e-3:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    return Rotation(q)


vectors = st.tuples(coord, coord, coord).map(np.array)


def test_rotate_identity():
    np.testing.assert_array_equal(rotate(Rotation.identity(), [1, 2, 3]), [1, 2, 3])


def test_rotate_quarter_yaw():
    R = Rotation.from_euler(yaw=math.pi / 2)
    np.testing.assert_allclose(rotate(R, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_rotate_half_roll():
    R = Rotation.from_axis_angle([1, 0, 0], math.pi)
    np.testing.assert_allclose(rotate(R, [0, 0, 1]), [0, 0, -1], atol=1e-15)


@given(rotations(), vectors)
def test_rotate_preserves_norm(R, v):
    assert abs(np.linalg.norm(rotate(R, v)) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))


@given(rotations(), rotations(), vectors)
def test_rotate_composes(Ra, Rb, v):
    lhs = rotate(Ra * Rb, v)
    rhs = rotate(Ra, rotate(Rb, v))
    assert np.allclose(lhs, rhs, atol=1e-10 * max(1.0, np.linalg.norm(v)))


@given(rotations(), vectors)
def test_rotate_matches_matrix(R, v):
    assert np.allclose(rotate(R, v), R.as_matrix() @ v, atol=1e-10 * max(1.0, np.linalg.norm(v)))


@given(rotations())
def test_matrix_round_trip(R):
    back = Rotation.from_matrix(R.as_matrix())
    # q and -q are the same rotation
    assert min(np.abs(back.q - R.q).max(), np.abs(back.q + R.q).max()) < 1e-12
    assert abs(np.linalg.det(R.as_matrix()) - 1.0) < 1e-12


def test_from_matrix_rejects_reflection():
    with pytest.raises(ValidationError):
        Rotation.from_matrix(np.diag([1.0, 1.0, -1.0]))


def test_integrate_rotation_zero_rate():
    R = integrate_rotation(Rotation.identity(), [0, 0, 0], 0.01)
    np.testing.assert_array_equal(R.q, [1, 0, 0, 0])


def test_integrate_rotation_half_turn_yaw():
    R = Rotation.identity()
    for _ in range(1000):
        R = integrate_rotation(R, [0, 0, math.pi], 1e-3)
    expected = Rotation.from_axis_angle([0, 0, 1], math.pi)
    np.testing.assert_allclose(R.as_matrix(), expected.as_matrix(), atol=1e-6)


@pytest.mark.slow
def test_integrate_rotation_keeps_unit_norm():
    rng = np.random.default_rng(5)
    R = Rotation.identity()
    worst = 0.0
    for w in rng.normal(scale=3.0, size=(1_000_000, 3)):
        R = integrate_rotation(R, w, 0.01)
        worst = max(worst, abs(float(R.q @ R.q) - 1.0))
    assert worst < 1e-9


def test_integrate_rotation_rejects_bad_dt():
    with pytest.raises(ValueError):
        integrate_rotation(Rotation.identity(), [0, 0, 1], 0.0)


@given(st.floats(-math.pi, math.pi), st.floats(-1.4, 1.4), st.floats(-math.pi, math.pi))
def test_euler_yaw_recovered(roll, pitch, yaw):
    R = Rotation.from_euler(roll=roll, pitch=pitch, yaw=yaw)
    assert abs(wrap_angle(R.yaw - yaw)) < 1e-9


def test_rotation_rejects_zero_quaternion():
    with pytest.raises(ValidationError):
        Rotation([0, 0, 0, 0])


def test_full_state_vector_round_trip():
    s = FullState([1, 2, 3], [4, 5, 6], Rotation.from_euler(0.1, 0.2, 0.3), [0.7, 0.8, 0.9],
                  ArmState(0.1, -0.2))
    back = FullState.from_vector(s.as_vector(), s.arm)
    assert back == s


def test_full_state_rejects_nonfinite():
    with pytest.raises(ValidationError, match="p"):
        FullState([math.nan, 0, 0], [0, 0, 0], Rotation.identity(), [0, 0, 0])


def test_model_params_defaults():
    p = ModelParams()
    assert p.thrust_max == pytest.approx(4 * 1.5 * 9.81)
    assert p.total_mass == pytest.approx(1.7)
    assert p.joint_max == pytest.approx(math.radians(120))


@pytest.mark.parametrize("kwargs, field", [
    ({"mass": -1.0}, "mass"),
    ({"inertia": (0.02, 0.0, 0.04)}, "inertia"),
    ({"l1": 0.0}, "l1"),
    ({"tau_max": -1.0}, "tau_max"),
    ({"joint_min": 1.0, "joint_max": 0.5}, "joint_min"),
])
def test_model_params_validation_names_field(kwargs, field):
    with pytest.raises(ValidationError, match=field):
        ModelParams(**kwargs)


def test_control_input_limits():
    p = ModelParams()
    assert ControlInput(10.0, [0.5, -0.5, 1.0]).within_limits(p)
    assert not ControlInput(-1.0).within_limits(p)
    assert not ControlInput(10.0, [1.5, 0, 0]).within_limits(p)


def test_clamp_arm():
    p = ModelParams()
    arm = p.clamp_arm(3.0, -3.0)
    assert arm == ArmState(p.joint_max, p.joint_min)
    assert p.arm_within_limits(arm)

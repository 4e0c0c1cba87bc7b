"""Planar two-link arm: kinematics and joint servo.

The arm hangs from ``r_mount`` and moves in the body x-z plane. Both joints
pitch downward for positive angles:

    p_arm = r_mount + [l1 c1 + l2 c12, 0, -(l1 s1 + l2 s12)]

Lateral (body y) corrections are left to the vehicle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ArmState, FullState, ModelParams, rotate


class UnreachableError(ValueError):
    """Target lies outside the arm's workspace or joint limits."""


@dataclass(frozen=True)
class ArmCommand:
    theta1_des: float
    theta2_des: float
    saturated: bool = False
    lateral_residual: float = 0.0

    def as_state(self) -> ArmState:
        return ArmState(self.theta1_des, self.theta2_des)


@dataclass(frozen=True)
class EndEffectorPose:
    position: np.ndarray


def arm_fk(arm: ArmState, params: ModelParams) -> np.ndarray:
    """End-effector position in the body frame."""
    t1, t12 = arm.theta1, arm.theta1 + arm.theta2
    reach = params.l1 * math.cos(t1) + params.l2 * math.cos(t12)
    drop = params.l1 * math.sin(t1) + params.l2 * math.sin(t12)
    mx, my, mz = params.r_mount
    return np.array([mx + reach, my, mz - drop])


def end_effector_world(uav: FullState, params: ModelParams) -> EndEffectorPose:
    return EndEffectorPose(uav.p + rotate(uav.R, arm_fk(uav.arm, params)))


def _planar(target_body, params: ModelParams) -> tuple[float, float, float]:
    mx, my, mz = params.r_mount
    tx, ty, tz = (float(c) for c in target_body)
    return tx - mx, mz - tz, ty - my


def arm_ik(target_body, params: ModelParams) -> ArmCommand:
    """Closed-form inverse kinematics, elbow-down preferred.

    The body-y component of the target is projected out and returned as
    ``lateral_residual``. Falls back to the elbow-up branch only when the
    elbow-down solution violates the joint limits.
    """
    a, b, residual = _planar(target_body, params)
    l1, l2 = params.l1, params.l2
    d = math.hypot(a, b)
    eps = 1e-12 * (l1 + l2)
    if d > l1 + l2 + eps or d < abs(l1 - l2) - eps:
        raise UnreachableError(
            f"planar distance {d:.6g} m outside [{abs(l1 - l2):.6g}, {l1 + l2:.6g}]")
    c2 = (d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = min(1.0, max(-1.0, c2))
    base = math.atan2(b, a)
    for sign in (-1.0, 1.0):
        theta2 = sign * math.acos(c2)
        theta1 = base - math.atan2(l2 * math.sin(theta2), l1 + l2 * math.cos(theta2))
        theta1 = math.remainder(theta1, 2.0 * math.pi)
        if params.arm_within_limits(ArmState(theta1, theta2)):
            return ArmCommand(theta1, theta2, lateral_residual=residual)
    raise UnreachableError("no inverse-kinematics branch within the joint limits")


def reach_bounds(params: ModelParams) -> tuple[float, float]:
    """Planar reach annulus, narrowed by the elbow joint limit."""
    l1, l2 = params.l1, params.l2
    elbow = min(abs(params.joint_min), abs(params.joint_max), math.pi)
    inner = math.sqrt(max(l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * math.cos(elbow), 0.0))
    return max(inner, abs(l1 - l2)), l1 + l2


def clamp_to_workspace(target_body, params: ModelParams) -> tuple[np.ndarray, bool]:
    """Pull a body-frame target onto the reachable annulus along its bearing.

    The inner radius accounts for the elbow limit. Returns the (possibly
    moved) target with y projected out and whether it was moved.
    """
    a, b, _ = _planar(target_body, params)
    lo, hi = reach_bounds(params)
    d = math.hypot(a, b)
    # stay a hair inside so arm_ik accepts the result
    outer = hi * (1.0 - 1e-9)
    inner = lo * (1.0 + 1e-9) + 1e-9
    if inner <= d <= outer:
        scale = 1.0
    elif d == 0.0:
        a, b, d, scale = 1.0, 0.0, 1.0, inner
    else:
        scale = (outer if d > outer else inner) / d
    mx, my, mz = params.r_mount
    moved = np.array([mx + a * scale, my, mz - b * scale])
    return moved, scale != 1.0


def servo_step(arm: ArmState, cmd: ArmCommand, rate_limit: float, dt: float,
               params: ModelParams | None = None) -> ArmState:
    """Rate-limited first-order joint tracking, clamped to the joint limits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    max_move = rate_limit * dt
    targets = (cmd.theta1_des, cmd.theta2_des)
    if params is not None:
        targets = tuple(min(max(t, params.joint_min), params.joint_max) for t in targets)
    new = []
    for current, goal in zip((arm.theta1, arm.theta2), targets):
        if abs(goal - current) <= max_move:
            new.append(goal)
        else:
            new.append(current + math.copysign(max_move, goal - current))
    if params is not None:
        return params.clamp_arm(*new)
    return ArmState(*new)

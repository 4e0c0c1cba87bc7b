"""Rigid-body quadrotor dynamics with a quasi-static arm wrench.

The arm is not simulated as a multibody chain. Its influence on the vehicle
is a gravity wrench that depends on the current joint angles, plus its mass
added to the translational inertia. Joint angles themselves move by servo
tracking (see :mod:`flowerreach.manipulator`) and are treated as exogenous
here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels
from .core import ControlInput, FullState, ModelParams, Rotation, as_vec3, rotate


class SimulationDiverged(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class Wrench:
    """Force in the world frame (N), torque in the body frame (N m)."""

    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "force", as_vec3(self.force, "force"))
        object.__setattr__(self, "torque", as_vec3(self.torque, "torque"))

    def as_array(self) -> np.ndarray:
        return np.concatenate((self.force, self.torque))


ZERO_WRENCH = Wrench()


@dataclass(frozen=True)
class StateDerivative:
    dp: np.ndarray
    dv: np.ndarray
    omega: np.ndarray
    domega: np.ndarray
    darm: np.ndarray = field(default_factory=lambda: np.zeros(2))


def physics_vector(params: ModelParams) -> np.ndarray:
    """Pack ``params`` into the flat layout the kernels expect."""
    return _physics_vector(params).copy()


@lru_cache(maxsize=64)
def _physics_vector(params: ModelParams) -> np.ndarray:
    jx, jy, jz = params.inertia
    m = params.total_mass
    return np.array([m, jx, jy, jz, params.g, params.thrust_max, params.tau_max,
                     1.0 / m, 1.0 / jx, 1.0 / jy, 1.0 / jz])


def uav_derivatives(state: FullState, u: ControlInput, params: ModelParams,
                    coupling: Wrench = ZERO_WRENCH) -> StateDerivative:
    """Translational and rotational rates of the vehicle.

    dv = (R [0, 0, thrust] + F_c) / (m + m_arm) - [0, 0, g]
    domega = J^-1 (tau + T_c - omega x J omega)
    """
    thrust_world = rotate(state.R, [0.0, 0.0, u.thrust])
    dv = (thrust_world + coupling.force) / params.total_mass - np.array([0.0, 0.0, params.g])
    J = params.J
    w = state.omega
    domega = np.linalg.solve(J, u.tau + coupling.torque - np.cross(w, J @ w))
    return StateDerivative(dp=state.v.copy(), dv=dv, omega=w.copy(), domega=domega)


def step_rk4(state: FullState, u: ControlInput, params: ModelParams,
             coupling: Wrench = ZERO_WRENCH, dt: float = 0.002) -> FullState:
    """Advance the vehicle by one RK4 step.

    The quaternion is renormalized and the arm angles are clamped to the
    joint limits. Raises SimulationDiverged on a non-finite result.
    """
    if not 0.0 < dt <= 0.05:
        raise ValueError(f"dt must lie in (0, 0.05], got {dt}")
    out = np.empty(13)
    ok = _kernels.rk4_step(state.as_vector(), u.as_array(), coupling.as_array(),
                           _physics_vector(params), dt, out)
    if not ok:
        raise SimulationDiverged(f"non-finite state after RK4 step: {out}")
    arm = params.clamp_arm(state.arm.theta1, state.arm.theta2)
    return FullState(out[0:3], out[3:6], Rotation(out[6:10]), out[10:13], arm)


def arm_com_body(arm, params: ModelParams) -> np.ndarray:
    """Composite centre of mass of the arm in the body frame.

    Each link is a point mass at its midpoint, weighted by link length.
    """
    c1, s1 = math.cos(arm.theta1), math.sin(arm.theta1)
    c12, s12 = math.cos(arm.theta1 + arm.theta2), math.sin(arm.theta1 + arm.theta2)
    l1, l2 = params.l1, params.l2
    mid1 = np.array([0.5 * l1 * c1, 0.0, -0.5 * l1 * s1])
    mid2 = np.array([l1 * c1 + 0.5 * l2 * c12, 0.0, -(l1 * s1 + 0.5 * l2 * s12)])
    return params.mount + (l1 * mid1 + l2 * mid2) / (l1 + l2)


def arm_coupling_wrench(arm, R: Rotation, params: ModelParams) -> Wrench:
    """Gravity wrench of the arm acting on the vehicle."""
    if params.arm_mass == 0.0:
        return ZERO_WRENCH
    force = np.array([0.0, 0.0, -params.arm_mass * params.g])
    return wrench_from_com(arm_com_body(arm, params), force, R)


def wrench_from_com(r_com, force_world, R: Rotation) -> Wrench:
    rx, ry, rz = r_com
    fx, fy, fz = rotate(R.inv(), force_world)
    return Wrench(force_world, (ry * fz - rz * fy, rz * fx - rx * fz, rx * fy - ry * fx))


def hover_thrust(params: ModelParams, coupling: Wrench = ZERO_WRENCH) -> float:
    """Thrust that cancels gravity and the vertical coupling force when level."""
    return params.total_mass * params.g - float(coupling.force[2])

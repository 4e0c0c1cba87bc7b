"""Shared domain types and rotation algebra.

Conventions:
    - World frame is z-up; gravity points along -z.
    - Body frame is x-forward, y-left, z-up; thrust acts along body +z.
    - Quaternions are stored [w, x, y, z] (Hamilton) and rotate body vectors
      into the world frame: v_W = R(q) v_B.
    - The flat 13-vector used by the kernels is
      [p(3), v(3), q(4), omega(3)].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

STATE_DIM = 13


class ValidationError(ValueError):
    """A value violates a documented invariant; message names the field."""


def as_vec3(value, name: str = "vector") -> np.ndarray:
    arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValidationError(f"{name}: expected 3 components, got {arr.shape[0]}")
    if not (math.isfinite(arr[0]) and math.isfinite(arr[1]) and math.isfinite(arr[2])):
        raise ValidationError(f"{name}: components must be finite")
    arr.flags.writeable = False
    return arr


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion attitude. Use the classmethods to construct."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0.0:
            raise ValidationError("rotation: quaternion must be finite and nonzero")
        q = q / n
        q.flags.writeable = False
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        return cls(np.concatenate(([math.cos(half)], math.sin(half) * axis)))

    @classmethod
    def from_rotvec(cls, rotvec) -> "Rotation":
        rotvec = np.asarray(rotvec, dtype=float)
        angle = float(np.linalg.norm(rotvec))
        if angle < 1e-300:
            return cls.identity()
        return cls.from_axis_angle(rotvec / angle, angle)

    @classmethod
    def from_euler(cls, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "Rotation":
        """Z-Y-X (yaw, then pitch, then roll) intrinsic angles in radians."""
        qz = cls.from_axis_angle([0, 0, 1], yaw).q
        qy = cls.from_axis_angle([0, 1, 0], pitch).q
        qx = cls.from_axis_angle([1, 0, 0], roll).q
        return cls(quat_multiply(quat_multiply(qz, qy), qx))

    @classmethod
    def from_matrix(cls, matrix) -> "Rotation":
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3) or not np.allclose(m @ m.T, np.eye(3), atol=1e-9) \
                or np.linalg.det(m) < 0:
            raise ValidationError("rotation: matrix must be proper orthonormal")
        tr = np.trace(m)
        # branch on the largest diagonal term for numerical stability
        if tr > 0:
            s = 2.0 * math.sqrt(1.0 + tr)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        return cls(np.array(q))

    def as_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, v) -> np.ndarray:
        return rotate(self, v)

    def inv(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_multiply(self.q, other.q))

    @property
    def yaw(self) -> float:
        w, x, y, z = self.q
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def __eq__(self, other):
        return isinstance(other, Rotation) and np.array_equal(self.q, other.q)

    def __repr__(self):
        return "Rotation(q=[{:.6g}, {:.6g}, {:.6g}, {:.6g}])".format(*self.q)


def rotate(R: Rotation, v) -> np.ndarray:
    """Return R v."""
    # q v q* expanded; cheaper than building the matrix
    w, x, y, z = R.q
    vx, vy, vz = np.asarray(v, dtype=float)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array([
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    ])


def integrate_rotation(R: Rotation, omega, dt: float) -> Rotation:
    """Propagate attitude by a constant body rate over ``dt``.

    Uses the exact exponential q <- q * exp(omega dt / 2), then renormalizes.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    wx, wy, wz = omega
    rate = math.sqrt(wx * wx + wy * wy + wz * wz)
    half = 0.5 * rate * dt
    if rate > 0.0:
        s = math.sin(half) / rate
        dq = (math.cos(half), wx * s, wy * s, wz * s)
    else:
        dq = (1.0, 0.0, 0.0, 0.0)
    return Rotation(quat_multiply(R.q, dq))


@dataclass(frozen=True)
class ArmState:
    theta1: float = 0.0
    theta2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


@dataclass(frozen=True)
class ControlInput:
    """Collective thrust (N, body +z) and body torques (N m)."""

    thrust: float
    tau: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "thrust", float(self.thrust))
        object.__setattr__(self, "tau", as_vec3(self.tau, "tau"))

    def as_array(self) -> np.ndarray:
        return np.array([self.thrust, *self.tau])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        return cls(u[0], u[1:4])

    def within_limits(self, params: "ModelParams") -> bool:
        return (0.0 <= self.thrust <= params.thrust_max
                and bool(np.all(np.abs(self.tau) <= params.tau_max)))


@dataclass(frozen=True, eq=False)
class FullState:
    p: np.ndarray
    v: np.ndarray
    R: Rotation
    omega: np.ndarray
    arm: ArmState = ArmState()

    def __post_init__(self):
        object.__setattr__(self, "p", as_vec3(self.p, "p"))
        object.__setattr__(self, "v", as_vec3(self.v, "v"))
        object.__setattr__(self, "omega", as_vec3(self.omega, "omega"))
        if not isinstance(self.R, Rotation):
            object.__setattr__(self, "R", Rotation(self.R))

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0), yaw: float = 0.0, arm: ArmState = ArmState()) -> "FullState":
        return cls(p, np.zeros(3), Rotation.from_euler(yaw=yaw), np.zeros(3), arm)

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.p, self.v, self.R.q, self.omega))

    @classmethod
    def from_vector(cls, x: np.ndarray, arm: ArmState = ArmState()) -> "FullState":
        return cls(x[0:3], x[3:6], Rotation(x[6:10]), x[10:13], arm)

    def replace(self, **changes) -> "FullState":
        return replace(self, **changes)

    def __eq__(self, other):
        return (isinstance(other, FullState)
                and np.array_equal(self.as_vector(), other.as_vector())
                and self.arm == other.arm)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the vehicle and arm (SI units).

    ``thrust_max`` defaults to four times the vehicle weight when omitted.
    The arm's links have uniform density, so each link's mass is
    proportional to its length.
    """

    mass: float = 1.5
    inertia: tuple = (0.02, 0.02, 0.04)
    g: float = 9.81
    arm_mass: float = 0.2
    l1: float = 0.2
    l2: float = 0.2
    r_mount: tuple = (0.1, 0.0, -0.05)
    joint_min: float = -math.radians(120.0)
    joint_max: float = math.radians(120.0)
    joint_rate_limit: float = 1.5
    thrust_max: float | None = None
    tau_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(j) for j in self.inertia))
        object.__setattr__(self, "r_mount", tuple(float(c) for c in self.r_mount))
        if self.thrust_max is None:
            object.__setattr__(self, "thrust_max", 4.0 * self.mass * self.g)
        self.validate()

    def validate(self):
        positive = ("mass", "g", "l1", "l2", "joint_rate_limit", "thrust_max", "tau_max")
        for name in positive:
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{name}: must be strictly positive, got {value}")
        # a massless arm is allowed: it switches the coupling wrench off
        if not (np.isfinite(self.arm_mass) and self.arm_mass >= 0):
            raise ValidationError(f"arm_mass: must be non-negative, got {self.arm_mass}")
        if len(self.inertia) != 3 or not all(np.isfinite(j) and j > 0 for j in self.inertia):
            raise ValidationError(f"inertia: diagonal must be three positive values, got {self.inertia}")
        if len(self.r_mount) != 3 or not all(np.isfinite(self.r_mount)):
            raise ValidationError("r_mount: expected 3 finite components")
        if not self.joint_min < self.joint_max:
            raise ValidationError("joint_min: must be below joint_max")

    @property
    def total_mass(self) -> float:
        return self.mass + self.arm_mass

    @property
    def J(self) -> np.ndarray:
        return np.diag(self.inertia)

    @property
    def mount(self) -> np.ndarray:
        return np.array(self.r_mount)

    def hover_thrust(self) -> float:
        return self.total_mass * self.g

    def arm_within_limits(self, arm: ArmState) -> bool:
        return all(self.joint_min <= a <= self.joint_max for a in (arm.theta1, arm.theta2))

    def clamp_arm(self, theta1: float, theta2: float) -> ArmState:
        lo, hi = self.joint_min, self.joint_max
        return ArmState(min(max(theta1, lo), hi), min(max(theta2, lo), hi))


def dataclass_to_dict(obj) -> dict:
    """Shallow dict of a dataclass with numpy arrays and tuples as lists."""
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, (np.ndarray, tuple)):
            value = [float(x) for x in value]
        out[f.name] = value
    return out


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def vec_list(values: Sequence[float]) -> list:
    return [float(v) for v in values]

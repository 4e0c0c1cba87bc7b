"""Mission executive: search, detect, approach, align, done.

Transition table (anything else is forbidden)::

    Search   -> Detect    fresh target
    Detect   -> Approach  M further observations since detection
    Approach -> Align     |p - p_des| <= approach_tol and |v| <= approach_speed
    Align    -> Done      aligned for dwell_steps consecutive steps
    Detect/Approach/Align -> Search   target older than stale_after
    any active state      -> Failed   elapsed >= timeout

Done and Failed are absorbing.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np

from .core import ArmState, FullState, ModelParams, ValidationError, as_vec3, rotate
from .manipulator import (ArmCommand, EndEffectorPose, UnreachableError, arm_ik,
                          clamp_to_workspace)
from .mppi import Setpoint
from .perception import TargetEstimate


class StaleTargetError(ValueError):
    """A setpoint was requested from a target estimate that is not fresh."""


class MissionState(IntEnum):
    SEARCH = 0
    DETECT = 1
    APPROACH = 2
    ALIGN = 3
    DONE = 4
    FAILED = 5


S = MissionState
TRANSITIONS = frozenset({
    (S.SEARCH, S.DETECT), (S.DETECT, S.APPROACH), (S.APPROACH, S.ALIGN), (S.ALIGN, S.DONE),
    (S.DETECT, S.SEARCH), (S.APPROACH, S.SEARCH), (S.ALIGN, S.SEARCH),
    (S.SEARCH, S.FAILED), (S.DETECT, S.FAILED), (S.APPROACH, S.FAILED), (S.ALIGN, S.FAILED),
})
TERMINAL = frozenset({S.DONE, S.FAILED})


@dataclass(frozen=True)
class MissionConfig:
    d_offset: tuple = (-0.30, 0.0, 0.0)
    approach_tol: float = 0.10
    approach_speed: float = 0.2
    align_threshold: float = 0.05
    dwell_steps: int = 25
    detect_count: int = 5
    timeout: float = 60.0
    stale_after: float = 1.0
    fresh_window: float = 0.5
    waypoint_tol: float = 0.15
    search_waypoints: tuple = ()
    stow: tuple = (math.pi / 2, 0.0)
    # emitted setpoints lead the vehicle by at most this much (m)
    carrot: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "d_offset", tuple(float(c) for c in self.d_offset))
        object.__setattr__(self, "stow", tuple(float(c) for c in self.stow))
        object.__setattr__(self, "search_waypoints", tuple(
            w if isinstance(w, Setpoint) else Setpoint(w[:3], yaw_des=w[3] if len(w) > 3 else 0.0)
            for w in self.search_waypoints))
        for name in ("approach_tol", "approach_speed", "align_threshold", "timeout",
                     "stale_after", "fresh_window", "waypoint_tol", "carrot"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"mission.{name}: must be positive")
        if self.dwell_steps < 1 or self.detect_count < 0:
            raise ValidationError("mission.dwell_steps/detect_count: invalid count")
        norm = float(np.linalg.norm(self.d_offset))
        if not 0.10 <= norm <= 0.30:
            warnings.warn(f"d_offset magnitude {norm:.3f} m outside the 0.10-0.30 m standoff band",
                          stacklevel=3)

    @property
    def offset(self) -> np.ndarray:
        return np.array(self.d_offset)

    @property
    def stow_command(self) -> ArmCommand:
        return ArmCommand(*self.stow)


@dataclass(frozen=True)
class MissionStatus:
    state: MissionState
    setpoint: Setpoint
    arm_command: ArmCommand
    aligned_streak: int = 0
    elapsed: float = 0.0
    detect_base: int = 0
    waypoint: int = 0
    trigger: str = ""

    @classmethod
    def initial(cls, uav: FullState, cfg: MissionConfig) -> "MissionStatus":
        if cfg.search_waypoints:
            sp = cfg.search_waypoints[0]
        else:
            sp = Setpoint(uav.p, yaw_des=uav.R.yaw)
        return cls(MissionState.SEARCH, sp, cfg.stow_command)


@dataclass(frozen=True)
class WorldSnapshot:
    uav: FullState
    ee: EndEffectorPose
    target: Optional[TargetEstimate]
    time: float


def _bearing_yaw(frm, to) -> Optional[float]:
    dx, dy = float(to[0] - frm[0]), float(to[1] - frm[1])
    if math.hypot(dx, dy) < 1e-9:
        return None
    return math.atan2(dy, dx)


def desired_standoff(target: TargetEstimate, cfg: MissionConfig,
                     from_position=None) -> Setpoint:
    """p_des = target + d_offset, yawed to face the target.

    Yaw faces the target from ``from_position`` when given, else from p_des;
    a purely vertical offset keeps yaw at zero.
    """
    if not target.fresh:
        raise StaleTargetError("standoff requested from a stale target")
    p_des = target.position_world + cfg.offset
    origin = p_des if from_position is None else from_position
    yaw = _bearing_yaw(origin, target.position_world)
    if yaw is None:
        yaw = _bearing_yaw(p_des, target.position_world) or 0.0
    return Setpoint(p_des, yaw_des=yaw)


def arm_alignment_command(target: TargetEstimate, uav: FullState, params: ModelParams,
                          cfg: MissionConfig) -> ArmCommand:
    """Joint command placing the tool on the target, saturated at the workspace edge."""
    body = rotate(uav.R.inv(), target.position_world - uav.p)
    reachable, moved = clamp_to_workspace(body, params)
    try:
        cmd = arm_ik(reachable, params)
    except UnreachableError:
        return replace(cfg.stow_command, saturated=True)
    lateral = float(body[1] - params.r_mount[1])
    return ArmCommand(cmd.theta1_des, cmd.theta2_des, saturated=moved, lateral_residual=lateral)


def alignment_check(ee: EndEffectorPose, target: TargetEstimate, threshold: float = 0.05) -> bool:
    return float(np.linalg.norm(ee.position - target.position_world)) <= threshold


def mission_step(status: MissionStatus, world: WorldSnapshot, cfg: MissionConfig,
                 params: ModelParams = ModelParams()) -> MissionStatus:
    """Advance the executive by one control step."""
    if status.state in TERMINAL:
        return replace(status, elapsed=world.time, trigger="")
    now = world.time
    uav = world.uav
    target = world.target
    if target is not None:
        target = target.at_time(now, cfg.fresh_window)
    fresh = target is not None and target.fresh
    stale = target is None or target.age(now) > cfg.stale_after

    def go(state, trigger, **changes):
        return replace(status, state=state, elapsed=now, trigger=trigger, **changes)

    if now >= cfg.timeout:
        return go(S.FAILED, "timeout", arm_command=cfg.stow_command)
    if status.state != S.SEARCH and stale:
        return go(S.SEARCH, "target stale", aligned_streak=0, arm_command=cfg.stow_command,
                  setpoint=Setpoint(uav.p, yaw_des=uav.R.yaw))

    if status.state == S.SEARCH:
        if fresh:
            sp = _standoff_setpoint(target, uav, cfg)
            return go(S.DETECT, "target fresh", setpoint=sp, detect_base=target.count)
        return replace(_search(status, uav, cfg), elapsed=now, trigger="")

    if not fresh:
        sp = status.setpoint
    elif status.state == S.ALIGN:
        # close to the target the bearing from the vehicle is too twitchy
        sp = desired_standoff(target, cfg)
    else:
        sp = _standoff_setpoint(target, uav, cfg)
    if status.state == S.DETECT:
        if not fresh:
            # confirmations must be consecutive
            return go(S.DETECT, "", setpoint=sp, detect_base=target.count)
        if target.count - status.detect_base >= cfg.detect_count:
            return go(S.APPROACH, "detection confirmed", setpoint=sp)
        return go(S.DETECT, "", setpoint=sp)

    if status.state == S.APPROACH:
        close = float(np.linalg.norm(uav.p - sp.p_des)) <= cfg.approach_tol
        slow = float(np.linalg.norm(uav.v)) <= cfg.approach_speed
        if close and slow:
            cmd = arm_alignment_command(target, uav, params, cfg) if fresh else status.arm_command
            return go(S.ALIGN, "standoff reached", setpoint=sp, arm_command=cmd, aligned_streak=0)
        return go(S.APPROACH, "", setpoint=sp)

    # ALIGN
    cmd = arm_alignment_command(target, uav, params, cfg) if fresh else status.arm_command
    aligned = fresh and alignment_check(world.ee, target, cfg.align_threshold)
    streak = status.aligned_streak + 1 if aligned else 0
    if streak >= cfg.dwell_steps:
        return go(S.DONE, "aligned", setpoint=sp, arm_command=cfg.stow_command,
                  aligned_streak=streak)
    return go(S.ALIGN, "", setpoint=sp, arm_command=cmd, aligned_streak=streak)


def _standoff_setpoint(target: TargetEstimate, uav: FullState, cfg: MissionConfig) -> Setpoint:
    sp = desired_standoff(target, cfg)
    if float(np.linalg.norm(uav.p - sp.p_des)) > cfg.approach_tol:
        # keep the target in view while still travelling
        sp = desired_standoff(target, cfg, from_position=uav.p)
    return sp


def lead_setpoint(sp: Setpoint, position, carrot: float) -> Setpoint:
    """Pull ``sp`` toward ``position`` so it is at most ``carrot`` away."""
    position = np.asarray(position, dtype=float)
    gap = sp.p_des - position
    dist = float(np.linalg.norm(gap))
    if dist <= carrot:
        return sp
    return Setpoint(position + gap * (carrot / dist), sp.v_des, sp.yaw_des)


def _search(status: MissionStatus, uav: FullState, cfg: MissionConfig) -> MissionStatus:
    if not cfg.search_waypoints:
        return status
    idx = status.waypoint % len(cfg.search_waypoints)
    wp = cfg.search_waypoints[idx]
    if float(np.linalg.norm(uav.p - wp.p_des)) <= cfg.waypoint_tol:
        idx = (idx + 1) % len(cfg.search_waypoints)
        wp = cfg.search_waypoints[idx]
    return replace(status, setpoint=wp, waypoint=idx)


def write_transition_log(path, rows) -> None:
    """CSV columns: time, from, to, trigger."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "from", "to", "trigger"])
        for t, a, b, trig in rows:
            writer.writerow([f"{t:.9g}", MissionState(a).name, MissionState(b).name, trig])

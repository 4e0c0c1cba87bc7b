"""Scenario files: JSON, SI units, unit suffix on every physical field.

Sections and keys are listed in ``SCHEMA``; unknown keys are rejected so a
typo never silently falls back to a default. See docs/scenario_schema.md.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .core import ArmState, FullState, ModelParams, Rotation, ValidationError
from .mission import MissionConfig
from .mppi import MppiConfig, Setpoint
from .perception import FORWARD_CAMERA, CameraModel, NoiseParams

BUILTIN_DIR = Path(__file__).parent / "scenarios"


class ScenarioParseError(ValueError):
    """The scenario file is missing or is not valid JSON."""


@dataclass(frozen=True)
class SimConfig:
    dt_phys: float = 0.002
    camera_rate: float = 30.0
    fuse_alpha: float = 0.3
    coupling: bool = True
    arena: tuple = (6.0, 6.0, 3.0)

    def __post_init__(self):
        object.__setattr__(self, "arena", tuple(float(a) for a in self.arena))
        if not 0 < self.dt_phys <= 0.05:
            raise ValidationError("dt_phys: must lie in (0, 0.05]")
        if not self.camera_rate > 0:
            raise ValidationError("camera_rate: must be positive")
        if not 0 < self.fuse_alpha <= 1:
            raise ValidationError("fuse_alpha: must lie in (0, 1]")
        if len(self.arena) != 3 or not all(a > 0 for a in self.arena):
            raise ValidationError("arena: expected three positive extents")

    def inside_arena(self, p) -> bool:
        """Arena is centred on the origin in x/y, floor at z=0, ceiling at arena[2]."""
        wx, wy, h = self.arena
        return abs(p[0]) <= wx / 2 and abs(p[1]) <= wy / 2 and 0.0 <= p[2] <= h


# section -> (dataclass, {json key: attribute})
SCHEMA: dict[str, tuple[type, dict[str, str]]] = {
    "model": (ModelParams, {
        "mass_kg": "mass", "inertia_diag_kg_m2": "inertia", "g_m_s2": "g",
        "arm_mass_kg": "arm_mass", "l1_m": "l1", "l2_m": "l2", "r_mount_m": "r_mount",
        "joint_min_rad": "joint_min", "joint_max_rad": "joint_max",
        "joint_rate_limit_rad_s": "joint_rate_limit", "thrust_max_n": "thrust_max",
        "tau_max_n_m": "tau_max",
    }),
    "camera": (CameraModel, {
        "fx_px": "fx", "fy_px": "fy", "cx_px": "cx", "cy_px": "cy",
        "width_px": "width", "height_px": "height", "translation_m": "translation",
        "rotation_wxyz": "rotation",
    }),
    "noise": (NoiseParams, {
        "sigma_px": "sigma_px", "sigma_depth_rel": "sigma_depth", "p_miss": "p_miss",
    }),
    "mppi": (MppiConfig, {
        "n_samples": "n_samples", "horizon_steps": "horizon", "dt_s": "dt", "lambda": "lam",
        "sigma_thrust_n": "sigma_thrust", "sigma_torque_n_m": "sigma_torque",
        "w_p": "w_p", "w_v": "w_v", "w_u": "w_u", "w_T": "w_T",
        "yaw_weight": "yaw_weight", "rate_weight": "rate_weight", "parallel": "parallel",
    }),
    "mission": (MissionConfig, {
        "d_offset_m": "d_offset", "approach_tol_m": "approach_tol",
        "approach_speed_m_s": "approach_speed", "align_threshold_m": "align_threshold",
        "dwell_steps": "dwell_steps", "detect_count": "detect_count", "timeout_s": "timeout",
        "stale_after_s": "stale_after", "fresh_window_s": "fresh_window",
        "waypoint_tol_m": "waypoint_tol", "search_waypoints": "search_waypoints",
        "stow_rad": "stow", "carrot_m": "carrot",
    }),
    "sim": (SimConfig, {
        "dt_phys_s": "dt_phys", "camera_rate_hz": "camera_rate", "fuse_alpha": "fuse_alpha",
        "coupling": "coupling", "arena_m": "arena",
    }),
}
INITIAL_KEYS = ("position_m", "velocity_m_s", "quaternion_wxyz", "yaw_rad", "omega_rad_s", "arm_rad")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str = "scenario"
    params: ModelParams = ModelParams()
    initial: FullState = field(default_factory=lambda: FullState.at_rest((0.0, 0.0, 1.5)))
    targets: tuple = ()
    camera: CameraModel = CameraModel()
    noise: NoiseParams = NoiseParams()
    mppi: MppiConfig = MppiConfig()
    mission: MissionConfig = MissionConfig()
    sim: SimConfig = SimConfig()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(np.array(t, dtype=float) for t in self.targets))
        ratio = self.mppi.dt / self.sim.dt_phys
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValidationError(
                f"mppi.dt_s: control period {self.mppi.dt} is not an integer multiple "
                f"of sim.dt_phys_s {self.sim.dt_phys}")
        if not self.params.arm_within_limits(self.initial.arm):
            raise ValidationError("initial.arm_rad: joint angles outside the joint limits")
        for i, t in enumerate(self.targets):
            if t.shape != (3,) or not np.all(np.isfinite(t)):
                raise ValidationError(f"targets[{i}]: expected 3 finite coordinates")

    @property
    def substeps(self) -> int:
        return int(round(self.mppi.dt / self.sim.dt_phys))

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return scenario_to_dict(self)


def _encode(value):
    if isinstance(value, Rotation):
        return [float(c) for c in value.q]
    if isinstance(value, Setpoint):
        return {"position_m": [float(c) for c in value.p_des], "yaw_rad": float(value.yaw_des)}
    if isinstance(value, (tuple, list, np.ndarray)):
        return [_encode(v) for v in value]
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def _decode(section: str, attr: str, value):
    if section == "camera" and attr == "rotation":
        return Rotation(value)
    if section == "mission" and attr == "search_waypoints":
        out = []
        for i, wp in enumerate(value):
            if not isinstance(wp, dict) or "position_m" not in wp:
                raise ValidationError(f"mission.search_waypoints[{i}]: needs position_m")
            out.append(Setpoint(wp["position_m"], yaw_des=float(wp.get("yaw_rad", 0.0))))
        return tuple(out)
    return value


def _build_section(section: str, raw: dict):
    cls, keymap = SCHEMA[section]
    if not isinstance(raw, dict):
        raise ValidationError(f"{section}: expected an object")
    unknown = set(raw) - set(keymap)
    if unknown:
        raise ValidationError(f"{section}.{sorted(unknown)[0]}: unknown field")
    reverse = {attr: key for key, attr in keymap.items()}
    kwargs = {keymap[k]: _decode(section, keymap[k], v) for k, v in raw.items()}
    try:
        return cls(**kwargs)
    except ValidationError as exc:
        msg = str(exc)
        head, _, tail = msg.partition(":")
        attr = head.split(".")[-1].split("/")[0]
        key = reverse.get(attr, attr)
        raise ValidationError(f"{section}.{key}:{tail}") from None
    except TypeError as exc:
        raise ValidationError(f"{section}: {exc}") from None


def _build_initial(raw: dict, params: ModelParams) -> FullState:
    unknown = set(raw) - set(INITIAL_KEYS)
    if unknown:
        raise ValidationError(f"initial.{sorted(unknown)[0]}: unknown field")
    if "quaternion_wxyz" in raw and "yaw_rad" in raw:
        raise ValidationError("initial.yaw_rad: give either yaw_rad or quaternion_wxyz")
    R = Rotation(raw["quaternion_wxyz"]) if "quaternion_wxyz" in raw \
        else Rotation.from_euler(yaw=float(raw.get("yaw_rad", 0.0)))
    arm = ArmState(*raw.get("arm_rad", (0.0, 0.0)))
    try:
        return FullState(raw.get("position_m", (0.0, 0.0, 0.0)), raw.get("velocity_m_s", (0.0, 0.0, 0.0)),
                         R, raw.get("omega_rad_s", (0.0, 0.0, 0.0)), arm)
    except ValidationError as exc:
        raise ValidationError(f"initial.{exc}") from None


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ValidationError("scenario: top level must be an object")
    allowed = set(SCHEMA) | {"name", "initial", "targets_m"}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"{sorted(unknown)[0]}: unknown section")
    sections = {name: _build_section(name, data.get(name, {})) for name in SCHEMA}
    initial = _build_initial(data.get("initial", {}), sections["model"])
    return Scenario(
        name=str(data.get("name", "scenario")),
        params=sections["model"], initial=initial,
        targets=tuple(data.get("targets_m", ())),
        camera=sections["camera"], noise=sections["noise"], mppi=sections["mppi"],
        mission=sections["mission"], sim=sections["sim"],
    )


def scenario_to_dict(sc: Scenario) -> dict:
    out: dict[str, Any] = {"name": sc.name}
    objs = {"model": sc.params, "camera": sc.camera, "noise": sc.noise, "mppi": sc.mppi,
            "mission": sc.mission, "sim": sc.sim}
    for section, (_, keymap) in SCHEMA.items():
        out[section] = {key: _encode(getattr(objs[section], attr)) for key, attr in keymap.items()}
    init = sc.initial
    out["initial"] = {
        "position_m": _encode(init.p), "velocity_m_s": _encode(init.v),
        "quaternion_wxyz": _encode(init.R), "omega_rad_s": _encode(init.omega),
        "arm_rad": [float(init.arm.theta1), float(init.arm.theta2)],
    }
    out["targets_m"] = [_encode(t) for t in sc.targets]
    return out


def resolve_scenario_path(path) -> Path:
    """Accept a file path or the name of a bundled scenario."""
    p = Path(path)
    if p.exists():
        return p
    bundled = BUILTIN_DIR / f"{path}.json"
    return bundled if bundled.exists() else p


def load_scenario(path) -> Scenario:
    p = resolve_scenario_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read scenario {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")

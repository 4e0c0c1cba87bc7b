"""Synthetic RGB-D flower sensing.

A geometric projector stands in for the learned detector: true targets are
projected through a pinhole camera, corrupted by pixel/depth noise and random
misses, then back-projected and fused exactly as real detections would be.
Camera frame is Z forward, X right, Y down.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import FullState, Rotation, ValidationError, as_vec3, rotate

# camera axes expressed in the body frame: X_c -> -y_b, Y_c -> -z_b, Z_c -> +x_b
FORWARD_CAMERA = Rotation.from_matrix([[0.0, 0.0, 1.0],
                                       [-1.0, 0.0, 0.0],
                                       [0.0, -1.0, 0.0]])


@dataclass(frozen=True)
class CameraModel:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    translation: tuple = (0.1, 0.0, -0.05)
    rotation: Rotation = FORWARD_CAMERA

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("camera.fx/fy: focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValidationError("camera.cx/cy: principal point must lie inside the image")
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))

    @classmethod
    def identity_mounted(cls, **kwargs) -> "CameraModel":
        """Camera frame coincident with the body frame (handy for tests)."""
        return cls(translation=(0.0, 0.0, 0.0), rotation=Rotation.identity(), **kwargs)

    def body_to_camera(self, p_body) -> np.ndarray:
        return rotate(self.rotation.inv(), np.asarray(p_body) - np.array(self.translation))

    def camera_to_body(self, p_cam) -> np.ndarray:
        return np.array(self.translation) + rotate(self.rotation, p_cam)


@dataclass(frozen=True)
class NoiseParams:
    sigma_px: float = 0.0
    sigma_depth: float = 0.0  # relative, fraction of depth
    p_miss: float = 0.0

    def __post_init__(self):
        if self.sigma_px < 0 or self.sigma_depth < 0:
            raise ValidationError("noise.sigma: must be non-negative")
        if not 0.0 <= self.p_miss <= 1.0:
            raise ValidationError("noise.p_miss: must lie in [0, 1]")


@dataclass(frozen=True)
class Detection:
    u: float
    v: float
    depth: float
    valid: bool = True

    def in_bounds(self, cam: CameraModel) -> bool:
        return 0.0 <= self.u < cam.width and 0.0 <= self.v < cam.height and self.depth > 0.0


@dataclass(frozen=True, eq=False)
class TargetEstimate:
    """Target position in the vehicle frame and in the world frame.

    ``uav_p``/``uav_R`` record the vehicle pose the estimate was expressed
    with, so ``position_world == uav_p + uav_R position_uav`` always holds.
    """

    position_uav: np.ndarray
    position_world: np.ndarray
    count: int = 1
    stamp: float = 0.0
    fresh: bool = True
    uav_p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    uav_R: Rotation = field(default_factory=Rotation.identity)

    def at_time(self, now: float, fresh_window: float = 0.5) -> "TargetEstimate":
        return replace(self, fresh=(now - self.stamp) <= fresh_window)

    def age(self, now: float) -> float:
        return now - self.stamp


def project_target(target_world, uav: FullState, cam: CameraModel) -> Optional[Detection]:
    """Ideal pinhole projection; None when behind the camera or off-image."""
    p_body = rotate(uav.R.inv(), np.asarray(target_world, dtype=float) - uav.p)
    X, Y, Z = cam.body_to_camera(p_body)
    if Z <= 0.0:
        return None
    det = Detection(cam.cx + cam.fx * X / Z, cam.cy + cam.fy * Y / Z, float(Z))
    return det if det.in_bounds(cam) else None


def corrupt_detection(d: Detection, noise: NoiseParams, rng: np.random.Generator,
                      cam: CameraModel | None = None) -> Optional[Detection]:
    """Add pixel/depth noise and random misses.

    Always consumes the same number of draws, so a stream stays aligned
    whatever the outcome. Noisy detections pushed off-image are dropped when
    ``cam`` is given.
    """
    miss, n_u, n_v, n_d = rng.random(), *rng.standard_normal(3)
    if miss < noise.p_miss:
        return None
    out = Detection(d.u + noise.sigma_px * n_u,
                    d.v + noise.sigma_px * n_v,
                    d.depth * (1.0 + noise.sigma_depth * n_d))
    if out.depth <= 0.0 or (cam is not None and not out.in_bounds(cam)):
        return None
    return out


def localize_target(d: Detection, cam: CameraModel, uav: FullState,
                    stamp: float = 0.0) -> TargetEstimate:
    """Back-project a detection with its depth into body and world frames."""
    if not d.valid or not d.depth > 0.0:
        raise ValueError("cannot localize an invalid detection")
    p_cam = np.array([(d.u - cam.cx) * d.depth / cam.fx,
                      (d.v - cam.cy) * d.depth / cam.fy,
                      d.depth])
    p_body = cam.camera_to_body(p_cam)
    p_world = uav.p + rotate(uav.R, p_body)
    return TargetEstimate(as_vec3(p_body), as_vec3(p_world), 1, stamp, True, uav.p, uav.R)


def fuse_estimate(prev: Optional[TargetEstimate], obs: TargetEstimate,
                  alpha: float = 0.3) -> TargetEstimate:
    """Exponential moving average of the world position.

    The body-frame position is re-expressed with the newest observation's
    vehicle pose.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if prev is None:
        return replace(obs, count=1)
    world = (1.0 - alpha) * prev.position_world + alpha * obs.position_world
    body = rotate(obs.uav_R.inv(), world - obs.uav_p)
    return TargetEstimate(as_vec3(body), as_vec3(world), prev.count + 1, obs.stamp,
                          True, obs.uav_p, obs.uav_R)


def observe(targets: Sequence, uav: FullState, cam: CameraModel) -> Optional[tuple[int, Detection]]:
    """Project every target and keep the one closest to the image centre."""
    best = None
    for i, t in enumerate(targets):
        det = project_target(t, uav, cam)
        if det is None:
            continue
        r = math.hypot(det.u - cam.cx, det.v - cam.cy)
        if best is None or r < best[0]:
            best = (r, i, det)
    return None if best is None else (best[1], best[2])


def write_detection_trace(path, rows: Iterable[tuple]) -> None:
    """CSV with columns time, u, v, depth, valid (missed frames: NaN, 0)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "u", "v", "depth", "valid"])
        for t, det in rows:
            if det is None:
                writer.writerow([f"{t:.9g}", "nan", "nan", "nan", 0])
            else:
                writer.writerow([f"{t:.9g}", f"{det.u:.9g}", f"{det.v:.9g}",
                                 f"{det.depth:.9g}", int(det.valid)])

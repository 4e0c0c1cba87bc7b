import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowerreach.core import FullState, Rotation, ValidationError, rotate
from flowerreach.perception import (CameraModel, Detection, NoiseParams, TargetEstimate,
                                    corrupt_detection, fuse_estimate, localize_target, observe,
                                    project_target, write_detection_trace)

CAM = CameraModel.identity_mounted(cx=320.0, cy=320.0)


def at(p=(0, 0, 0), R=None):
    return FullState(p, np.zeros(3), R or Rotation.identity(), np.zeros(3))


def obs_at(world):
    w = np.array(world, dtype=float)
    return TargetEstimate(w, w)


def test_project_on_axis():
    d = project_target([0, 0, 2], at(), CAM)
    assert (d.u, d.v, d.depth) == (320.0, 320.0, 2.0)


def test_project_offset():
    d = project_target([0.4, 0, 2], at(), CAM)
    assert (d.u, d.v, d.depth) == pytest.approx((420.0, 320.0, 2.0))


def test_project_behind():
    assert project_target([0, 0, -1], at(), CAM) is None


def test_project_off_image():
    assert project_target([5, 0, 1], at(), CAM) is None


def test_camera_validation():
    with pytest.raises(ValidationError):
        CameraModel(fx=0.0)
    with pytest.raises(ValidationError):
        CameraModel(cx=700.0)


def test_corrupt_noiseless_identity():
    d = Detection(100.0, 200.0, 3.0)
    out = corrupt_detection(d, NoiseParams(), np.random.default_rng(0))
    assert out == d


def test_corrupt_always_miss():
    rng = np.random.default_rng(0)
    d = Detection(100.0, 200.0, 3.0)
    assert all(corrupt_detection(d, NoiseParams(p_miss=1.0), rng) is None for _ in range(100))


def test_corrupt_pixel_std():
    rng = np.random.default_rng(1)
    d = Detection(320.0, 240.0, 2.0)
    us = np.array([corrupt_detection(d, NoiseParams(sigma_px=2.0), rng).u for _ in range(10_000)])
    assert abs(us.std() - 2.0) < 0.1


def test_localize_examples():
    d = Detection(420.0, 320.0, 2.0)
    est = localize_target(d, CAM, at())
    np.testing.assert_allclose(est.position_uav, [0.4, 0, 2.0], atol=1e-15)
    est = localize_target(d, CAM, at((1, 0, 0)))
    np.testing.assert_allclose(est.position_world, [1.4, 0, 2.0], atol=1e-15)


def test_localize_rejects_invalid():
    with pytest.raises(ValueError):
        localize_target(Detection(1, 1, 1, valid=False), CAM, at())


@given(st.floats(-math.pi, math.pi), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
       st.floats(0.3, 8.0), st.floats(-0.5, 0.5), st.floats(-0.4, 0.4),
       st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_round_trip_default_camera(yaw, roll, pitch, rng_, az, el, p):
    cam = CameraModel()
    uav = at(p, Rotation.from_euler(roll, pitch, yaw))
    # target along a ray that the forward camera can see
    ray_cam = np.array([math.tan(az), math.tan(el), 1.0]) * rng_
    target = uav.p + rotate(uav.R, cam.camera_to_body(ray_cam))
    d = project_target(target, uav, cam)
    if d is None:
        return
    est = localize_target(d, cam, uav)
    assert np.linalg.norm(est.position_world - target) < 1e-9


@given(st.floats(-math.pi, math.pi), st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.floats(100, 500), st.floats(100, 400), st.floats(0.1, 10))
def test_frame_consistency(yaw, p, u, v, depth):
    uav = at(p, Rotation.from_euler(0.1, -0.05, yaw))
    est = localize_target(Detection(u, v, depth), CameraModel(), uav)
    np.testing.assert_allclose(est.position_world, uav.p + rotate(uav.R, est.position_uav), atol=1e-12)


def test_fuse_initialization():
    est = fuse_estimate(None, obs_at([2, 0, 1.5]))
    np.testing.assert_array_equal(est.position_world, [2, 0, 1.5])
    assert est.count == 1


@pytest.mark.parametrize("alpha", [0.1, 0.3, 1.0])
def test_fuse_fixed_point(alpha):
    prev = fuse_estimate(None, obs_at([2, 0, 1.5]))
    est = fuse_estimate(prev, obs_at([2, 0, 1.5]), alpha)
    np.testing.assert_allclose(est.position_world, [2, 0, 1.5], atol=1e-15)
    assert est.count == 2


def test_fuse_ema():
    est = fuse_estimate(obs_at([0, 0, 0]), obs_at([1, 0, 0]), 0.3)
    np.testing.assert_allclose(est.position_world, [0.3, 0, 0], atol=1e-15)


def test_fuse_rejects_bad_alpha():
    with pytest.raises(ValueError):
        fuse_estimate(None, obs_at([0, 0, 0]), 0.0)


def test_fusion_beats_single_observation():
    cam = CameraModel()
    uav = at((0, 0, 1.5))
    target = np.array([2.0, 0.1, 1.4])
    noise = NoiseParams(sigma_px=2.0, sigma_depth=0.02)
    clean = project_target(target, uav, cam)
    single, fused = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        est = None
        for i in range(50):
            d = corrupt_detection(clean, noise, rng, cam)
            obs = localize_target(d, cam, uav)
            if i == 0:
                single.append(np.linalg.norm(obs.position_world - target))
            est = fuse_estimate(est, obs)
        fused.append(np.linalg.norm(est.position_world - target))
    assert np.median(fused) < np.median(single)


def test_observe_prefers_centre():
    uav = at()
    hit = observe([[0.4, 0, 2], [0.05, 0, 2], [0, 0, -3]], uav, CAM)
    assert hit[0] == 1
    assert observe([[0, 0, -3]], uav, CAM) is None


def test_detection_trace(tmp_path):
    path = tmp_path / "det.csv"
    write_detection_trace(path, [(0.0, Detection(1, 2, 3)), (0.1, None)])
    lines = path.read_text().splitlines()
    assert lines[0] == "time,u,v,depth,valid"
    assert lines[2] == "0.1,nan,nan,nan,0"

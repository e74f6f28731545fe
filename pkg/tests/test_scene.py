import math

import numpy as np
import pytest
from scipy import stats

from eyesynth import optics, scene as sc
from eyesynth.assets import default_textures
from eyesynth.eye import EyeParams, SemanticClass, build_eye
from eyesynth.optics import SurfaceId, Transform
from eyesynth.rng import Rng
from eyesynth.scene import (CameraModel, EnvironmentState, EyeglassesConfig,
                            Scene, env_radiance, generate_camera_ray,
                            intersect_scene, project_point,
                            sample_env_intensity_bin, sample_pose_s_general,
                            sample_pose_s_nvgaze, sample_pose_s_openeds)


class _MidpointRng:
    """Stand-in stream returning 0.5 forever (zero-slippage poses)."""

    def next(self):
        return 0.5

    def uniform(self, lo, hi):
        return 0.5 * (lo + hi)


def _cam_identity(fx=500.0, fy=500.0, cx=320.0, cy=240.0, w=640, h=480):
    return CameraModel(fx, fy, cx, cy, w, h, Transform.identity())


# ----------------------------------------------------------------- camera

def test_principal_ray_is_axis():
    cam = _cam_identity()
    ray = generate_camera_ray(cam, cam.cx, cam.cy, (0.0, 0.0))
    assert np.allclose(ray.direction, [0, 0, 1], atol=1e-12)


def test_camera_ray_project_roundtrip():
    cam = sample_pose_s_general(Rng(3, (0, 0, 0, 0))).camera
    rng = np.random.default_rng(0)
    for _ in range(200):
        px = rng.uniform(0, cam.width)
        py = rng.uniform(0, cam.height)
        ray = generate_camera_ray(cam, px, py)
        probe = ray.origin + 17.0 * ray.direction
        qx, qy, ok = project_point(cam, probe)
        assert ok
        assert abs(qx - px) < 1e-6 and abs(qy - py) < 1e-6


def test_pinhole_direction_arithmetic():
    cam = _cam_identity()
    ray = generate_camera_ray(cam, 420.0, 240.0, (0.0, 0.0))
    expected = optics.unit([0.2, 0.0, 1.0])
    assert np.allclose(ray.direction, expected, atol=1e-12)


def test_camera_ray_rejects_outside_pixels():
    cam = _cam_identity()
    with pytest.raises(ValueError):
        generate_camera_ray(cam, -1, 5)
    with pytest.raises(ValueError):
        generate_camera_ray(cam, 0, 480)


# ------------------------------------------------------------ pose samplers

def _orthonormal(cam: CameraModel):
    r = cam.extrinsics.rot
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_s_nvgaze_supports_and_uniformity():
    root = Rng(11)
    d, ox, oy = [], [], []
    for i in range(10_000):
        s = sample_pose_s_nvgaze(root.fork(1, i, 0, 0))
        d.append(s.distance)
        ox.append(s.offset_x)
        oy.append(s.offset_y)
    d, ox, oy = np.array(d), np.array(ox), np.array(oy)
    assert d.min() >= 35.0 and d.max() <= 45.0
    assert ox.min() >= -5.0 and ox.max() <= 5.0
    assert oy.min() >= -5.0 and oy.max() <= 5.0
    assert stats.kstest(d, "uniform", args=(35, 10)).pvalue > 0.01
    assert stats.kstest(ox, "uniform", args=(-5, 10)).pvalue > 0.01
    assert stats.kstest(oy, "uniform", args=(-5, 10)).pvalue > 0.01


def test_s_nvgaze_deterministic_and_frontal():
    a = sample_pose_s_nvgaze(Rng(5, (2, 2, 2, 2)))
    b = sample_pose_s_nvgaze(Rng(5, (2, 2, 2, 2)))
    assert np.allclose(a.camera.position(), b.camera.position())
    _orthonormal(a.camera)
    # zero-slippage configuration: optical axis passes through the apex
    z = sample_pose_s_nvgaze(_MidpointRng())
    assert z.offset_x == 0.0 and z.offset_y == 0.0
    fwd = z.camera.extrinsics.inverse().rot[:, 2]
    apex = np.array([0.0, 0.0, sc.DEFAULT_APEX_OFFSET])
    to_apex = optics.unit(apex - z.camera.position())
    assert np.allclose(fwd, to_apex, atol=1e-12)
    assert len(z.emitters.emitters) == 1


def test_s_openeds_ring_geometry():
    s = sample_pose_s_openeds(Rng(9, (0, 4, 0, 0)))
    ems = s.emitters.positions()
    assert len(ems) == 16
    center = ems.mean(axis=0)
    assert np.allclose(center, s.camera.position(), atol=1e-9)
    # antipodal pairs and 22.5 degree spacing on the ring
    for k in range(8):
        assert np.allclose(ems[k] - center, -(ems[k + 8] - center), atol=1e-9)
    v0 = ems[0] - center
    v1 = ems[1] - center
    ang = math.degrees(math.acos(
        float(v0 @ v1) / (np.linalg.norm(v0) * np.linalg.norm(v1))))
    assert ang == pytest.approx(22.5, abs=1e-9)


def test_s_openeds_fixed_elevation():
    for i in range(200):
        s = sample_pose_s_openeds(Rng(31, (0, i, 0, 0)))
        fwd = s.camera.extrinsics.inverse().rot[:, 2]
        el = math.degrees(math.asin(fwd[1]))
        assert el == pytest.approx(-10.0, abs=1e-9)
        assert 35.0 <= s.distance <= 45.0
        _orthonormal(s.camera)
    assert s.camera.width == 400 and s.camera.height == 640


def test_s_general_supports_and_uniformity():
    root = Rng(13)
    az, el, d = [], [], []
    for i in range(10_000):
        s = sample_pose_s_general(root.fork(3, i, 0, 0))
        az.append(s.azimuth)
        el.append(s.elevation)
        d.append(s.distance)
        assert -1.0 <= s.offset_x <= 1.0 and -1.0 <= s.offset_y <= 1.0
    az, el, d = np.array(az), np.array(el), np.array(d)
    assert az.min() >= -20 and az.max() <= 60
    assert el.min() >= -20 and el.max() <= 40
    assert d.min() >= 25 and d.max() <= 45
    assert stats.kstest(az, "uniform", args=(-20, 80)).pvalue > 0.01
    assert stats.kstest(el, "uniform", args=(-20, 60)).pvalue > 0.01
    assert stats.kstest(d, "uniform", args=(25, 20)).pvalue > 0.01


def test_s_general_extreme_corner_still_aims_at_eye():
    # the aimed-at-centre construction keeps the eyeball in view even at
    # the az=60, el=40 corner, slippage included
    for i in range(300):
        s = sample_pose_s_general(Rng(77, (0, i, 0, 0)))
        fwd = s.camera.extrinsics.inverse().rot[:, 2]
        pos = s.camera.position()
        # perpendicular distance from the eyeball centre to the camera axis
        perp = np.linalg.norm(np.cross(-pos, fwd))
        assert perp < 12.0


def test_s_general_origin_matches_nvgaze_frontal():
    g = sample_pose_s_general(_MidpointRng())
    assert g.azimuth == pytest.approx(20.0)  # midpoint of [-20, 60]
    # the manifold origin (az=el=0, zero jitter) is the frontal pose
    origin = sc.build_pose("s-general", 640, 480, 40.0, 0.0, 0.0, 0.0, 0.0)
    frontal = sample_pose_s_nvgaze(_MidpointRng())
    assert np.allclose(origin.camera.extrinsics.rot,
                       frontal.camera.extrinsics.rot, atol=1e-12)
    assert np.allclose(origin.camera.position(), frontal.camera.position(),
                       atol=1e-9)


# ------------------------------------------------------------- environment

def _uniform_env(value=1.0, scale=1.0):
    img = np.full((8, 16, 3), value, dtype=float)
    return EnvironmentState("t", img, intensity_scale=scale)


def test_env_uniform_scaling():
    env = _uniform_env(0.8, scale=1.5)
    rng = np.random.default_rng(1)
    dirs = optics.normalize_rows(rng.normal(size=(500, 3)))
    vals = sc.env_radiance_batch(env, dirs)
    assert np.allclose(vals, 1.2, atol=1e-12)


def test_env_rotation_periodicity():
    img = np.zeros((4, 8, 3))
    img[1, 2] = (5.0, 1.0, 0.5)
    a = EnvironmentState("t", img, rotation_y=0.0)
    b = EnvironmentState("t", img, rotation_y=360.0)
    rng = np.random.default_rng(2)
    dirs = optics.normalize_rows(rng.normal(size=(200, 3)))
    assert np.allclose(sc.env_radiance_batch(a, dirs),
                       sc.env_radiance_batch(b, dirs), atol=1e-9)


def test_env_bright_texel_rotates_with_map():
    # single bright texel: after a 90 deg y-rotation the bright direction is
    # the original direction rotated by 90 deg about y
    img = np.zeros((2, 4, 3))
    img[0, 1] = (10.0, 10.0, 10.0)
    plain = EnvironmentState("t", img)
    rot = EnvironmentState("t", img, rotation_y=90.0)
    rng = np.random.default_rng(3)
    dirs = optics.normalize_rows(rng.normal(size=(4000, 3)))
    bright_plain = dirs[sc.env_radiance_batch(plain, dirs)[:, 0] > 5.0]
    rotated = bright_plain @ Transform.rotation_y(90.0).rot.T
    assert len(bright_plain) > 50
    assert np.all(sc.env_radiance_batch(rot, rotated)[:, 0] > 5.0)


def test_env_rotation_inverse_composition():
    img = np.zeros((6, 12, 3))
    img[2, 7] = (3.0, 2.0, 1.0)
    img[4, 1] = (0.5, 1.5, 2.5)
    base = EnvironmentState("t", img)
    fwd = EnvironmentState("t", img, rotation_y=37.0, rotation_x=21.0,
                           rotation_z=-13.0)
    rng = np.random.default_rng(4)
    dirs = optics.normalize_rows(rng.normal(size=(500, 3)))
    undone = dirs @ fwd.rotation().rot.T  # pre-rotate so the map rotation cancels
    assert np.allclose(sc.env_radiance_batch(fwd, undone),
                       sc.env_radiance_batch(base, dirs), atol=1e-9)


def test_env_intensity_bins():
    root = Rng(101)
    draws = np.array([sample_env_intensity_bin(root.fork(7, i, 0, 0))
                      for i in range(30_000)])
    assert draws.min() >= 0.5 and draws.max() <= 1.5
    counts = [np.sum((draws >= 0.5 + k / 3) & (draws < 0.5 + (k + 1) / 3))
              for k in range(3)]
    counts[2] += np.sum(draws == 1.5)
    for c in counts:
        assert abs(c - 10_000) <= 300
    again = np.array([sample_env_intensity_bin(Rng(101).fork(7, i, 0, 0))
                      for i in range(100)])
    assert np.array_equal(draws[:100], again)


# ------------------------------------------------------------ intersection

def _frontal_scene(closure=0.0, glasses=False):
    eye = build_eye(EyeParams(eyelid_closure=closure))
    pose = sample_pose_s_nvgaze(_MidpointRng())
    return Scene(eye, pose.camera, pose.emitters, default_textures(),
                 glasses=EyeglassesConfig(present=glasses))


def test_frontal_axial_ray_hits_tear_film_first():
    s = _frontal_scene()
    ray = generate_camera_ray(s.camera, s.camera.cx, s.camera.cy, (0.0, 0.0))
    hit, mat, cls = intersect_scene(s, ray)
    assert hit.surface_id == SurfaceId.CORNEA
    assert cls is None  # transparent, classification passes through
    assert hit.t == pytest.approx(40.0, abs=1e-6)


def test_closed_lid_blocks_axial_ray():
    s = _frontal_scene(closure=1.0)
    ray = generate_camera_ray(s.camera, s.camera.cx, s.camera.cy, (0.0, 0.0))
    hit, mat, cls = intersect_scene(s, ray)
    assert hit.surface_id == SurfaceId.EYELID
    assert cls == SemanticClass.BACKGROUND_SKIN


def test_glasses_lens_hit_before_eye():
    s = _frontal_scene(glasses=True)
    ray = generate_camera_ray(s.camera, s.camera.cx, s.camera.cy, (0.0, 0.0))
    hit, mat, cls = intersect_scene(s, ray)
    assert hit.surface_id == SurfaceId.GLASSES_LENS
    assert hit.t < 40.0 - 15.0  # lens sits ~18mm in front of the apex


def test_scene_nearest_matches_exhaustive_per_surface():
    s = _frontal_scene(glasses=True)
    rng = np.random.default_rng(8)
    n = 10_000
    origins = np.tile(s.camera.position(), (n, 1))
    targets = rng.uniform(-16, 16, (n, 3)) * np.array([1, 1, 0.6])
    dirs = optics.normalize_rows(targets - origins)
    t, sid = s.intersect_batch(origins, dirs)
    # exhaustive: min over every per-surface candidate list
    t_min = np.full(n, np.inf)
    for t_s, _ in s._surface_ts(origins, dirs, sc.MASK_RENDER):
        t_min = np.minimum(t_min, t_s)
    same = np.isclose(t, t_min) | (~np.isfinite(t) & ~np.isfinite(t_min))
    assert np.all(same)

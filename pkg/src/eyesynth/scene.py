"""World around the eye: camera, emitters, environment, eyewear, skin.

Head-frame conventions: origin at the eyeball centre, +z out of the face
toward a frontal camera, +y up, +x to the image right of that camera.
The eye assembly rotates inside this frame by gaze; lids, caruncle, head
backdrop, glasses and emitters stay head-fixed.

The skin enclosure is a sphere shell ("lid dome") of radius
apex_offset + lid clearance around the whole eyeball with an almond-shaped
palpebral opening; its front region is the eyelids, the remainder the eye
socket.  Everything outside it is a large ellipsoidal head patch.  The eye
is therefore reachable only through the lid opening, which is what makes
fully-closed masks all-background by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import optics
from .eye import EyeAssembly, Material, MaterialKind
from .optics import SurfaceId, Transform, normalize_rows, unit
from .rng import Rng

DEFAULT_APEX_OFFSET = 13.036017073547137  # derived from default EyeParams


class AssetError(RuntimeError):
    """A required texture or environment asset is missing or malformed."""


# ---------------------------------------------------------------- camera

@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: Transform  # world -> camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def position(self) -> np.ndarray:
        return self.extrinsics.inverse().trans

    def intrinsics_tuple(self) -> tuple[float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy)


def default_intrinsics(width: int, height: int) -> tuple[float, float, float, float]:
    """fx = fy such that the 24 mm eyeball spans ~70% of the image height
    when the camera sits 40 mm from the corneal apex."""
    f = 0.7 * height * (40.0 + DEFAULT_APEX_OFFSET) / 24.0
    return f, f, width / 2.0, height / 2.0


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> Transform:
    """world->camera transform for a camera at `position` looking at `target`,
    with +z forward, +x image-right, +y image-down."""
    pos = np.asarray(position, dtype=float)
    fwd = unit(np.asarray(target, dtype=float) - pos)
    x_c = unit(np.cross(-np.asarray(up, dtype=float), fwd))
    y_c = np.cross(fwd, x_c)
    rot = np.stack([x_c, y_c, fwd], axis=0)
    return Transform(rot, -(rot @ pos))


def generate_camera_ray(cam: CameraModel, px: float, py: float,
                        jitter=(0.0, 0.0)) -> optics.Ray:
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError("pixel outside the image")
    d_cam = np.array([(px + jitter[0] - cam.cx) / cam.fx,
                      (py + jitter[1] - cam.cy) / cam.fy, 1.0])
    to_world = cam.extrinsics.inverse()
    return optics.Ray(to_world.trans, to_world.apply_dir(d_cam))


def camera_ray_batch(cam: CameraModel, px: np.ndarray, py: np.ndarray,
                     jx: np.ndarray, jy: np.ndarray):
    """Vectorized pinhole rays; returns (origins, directions), world frame."""
    d = np.stack([(px + jx - cam.cx) / cam.fx,
                  (py + jy - cam.cy) / cam.fy,
                  np.ones_like(px, dtype=float)], axis=1)
    to_world = cam.extrinsics.inverse()
    dirs = normalize_rows(d @ to_world.rot.T)
    origins = np.broadcast_to(to_world.trans, dirs.shape).copy()
    return origins, dirs


def project_point(cam: CameraModel, point_world) -> tuple[float, float, bool]:
    """Pinhole projection; the flag is False when the point is not in front
    of the camera."""
    p = cam.extrinsics.apply_point(point_world)
    if p[2] <= 1e-9:
        return math.nan, math.nan, False
    return (cam.fx * p[0] / p[2] + cam.cx,
            cam.fy * p[1] / p[2] + cam.cy, True)


# --------------------------------------------------------------- emitters

@dataclass(frozen=True)
class Emitter:
    position: np.ndarray
    intensity: float = 1.0
    radius: float = 0.5  # mm; finite size so glints cover several pixels

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, float))

    @property
    def radiance(self) -> float:
        return self.intensity / (math.pi * self.radius ** 2)


@dataclass(frozen=True)
class EmitterLayout:
    emitters: tuple[Emitter, ...]
    layout_id: str = "custom"

    def __post_init__(self):
        if not all(np.all(np.isfinite(e.position)) for e in self.emitters):
            raise ValueError("emitter positions must be finite")

    def positions(self) -> np.ndarray:
        return np.stack([e.position for e in self.emitters], axis=0)


def single_emitter_near(cam: CameraModel, offset_mm: float = 5.0,
                        intensity: float = 1.0, radius: float = 0.5,
                        layout_id: str = "near-camera") -> EmitterLayout:
    to_world = cam.extrinsics.inverse()
    pos = to_world.trans + offset_mm * to_world.rot[:, 0]
    return EmitterLayout((Emitter(pos, intensity, radius),), layout_id)


def emitter_ring(cam: CameraModel, count: int = 16, ring_radius: float = 12.0,
                 intensity: float = 1.0, radius: float = 0.5,
                 layout_id: str = "ring16") -> EmitterLayout:
    """Emitters equally spaced on a circle centred on and perpendicular to
    the camera axis."""
    to_world = cam.extrinsics.inverse()
    x_c, y_c = to_world.rot[:, 0], to_world.rot[:, 1]
    ems = []
    for k in range(count):
        a = 2.0 * math.pi * k / count
        pos = to_world.trans + ring_radius * (math.cos(a) * x_c + math.sin(a) * y_c)
        ems.append(Emitter(pos, intensity, radius))
    return EmitterLayout(tuple(ems), layout_id)


# ------------------------------------------------------------ environment

@dataclass(frozen=True)
class EnvironmentState:
    map_id: str
    image: np.ndarray                      # (H, W, 3) linear radiance, >= 0
    rotation_y: float = 0.0                # degrees, [0, 360)
    rotation_x: float = 0.0                # degrees, [-60, 60]
    rotation_z: float = 0.0                # degrees, [-60, 60]
    intensity_scale: float = 1.0           # [0.5, 1.5]

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise AssetError("environment map must be H x W x 3")
        if np.any(img < 0):
            raise AssetError("environment radiance must be non-negative")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "rotation_y", self.rotation_y % 360.0)
        if abs(self.rotation_x) > 60.0 or abs(self.rotation_z) > 60.0:
            raise ValueError("x/z environment rotations limited to +-60 deg")

    def rotation(self) -> Transform:
        return (Transform.rotation_y(self.rotation_y)
                .compose(Transform.rotation_x(self.rotation_x))
                .compose(Transform.rotation_z(self.rotation_z)))


def env_radiance_batch(env: EnvironmentState, dirs: np.ndarray) -> np.ndarray:
    """Bilinear equirectangular lookup of world directions; (N, 3) radiance."""
    rot = env.rotation()
    d = dirs @ rot.rot  # inverse rotation of the map == rotate lookup dirs
    lon = np.arctan2(d[:, 0], d[:, 2])             # 0 at +z, + toward +x
    lat = np.arcsin(np.clip(d[:, 1], -1.0, 1.0))
    h, w = env.image.shape[:2]
    u = (lon / (2.0 * math.pi) + 0.5) * w - 0.5
    v = (0.5 - lat / math.pi) * h - 0.5
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    u0w = np.mod(u0, w)
    u1w = np.mod(u0 + 1, w)
    v0c = np.clip(v0, 0, h - 1)
    v1c = np.clip(v0 + 1, 0, h - 1)
    img = env.image
    val = ((img[v0c, u0w] * (1 - fu) + img[v0c, u1w] * fu) * (1 - fv)
           + (img[v1c, u0w] * (1 - fu) + img[v1c, u1w] * fu) * fv)
    return val * env.intensity_scale


def env_radiance(env: EnvironmentState, direction) -> np.ndarray:
    return env_radiance_batch(env, np.asarray(direction, float)[None, :])[0]


def sample_env_intensity_bin(rng: Rng) -> float:
    """Equal thirds of dark / well lit / saturated scaling in [0.5, 1.5]."""
    b = rng.randint(3)
    lo = 0.5 + b / 3.0
    return lo + rng.next() / 3.0


# ----------------------------------------------------------------- eyewear

@dataclass(frozen=True)
class EyeglassesConfig:
    present: bool = False
    lens_sphere_radius: float = 120.0   # mm
    standoff: float = 18.0              # apex -> lens front distance
    aperture_radius: float = 16.0       # lens cap radius
    thickness: float = 3.0              # mm (fixed by construction)
    frame_tube_radius: float = 1.5
    refractive_index: float = 1.5       # reflection-only coating

    def __post_init__(self):
        if self.thickness != 3.0:
            raise ValueError("lens thickness is fixed at 3 mm")


# ------------------------------------------------------------------- head

@dataclass(frozen=True)
class HeadConfig:
    """Procedural skin geometry around the eye (one 'head identity')."""

    head_id: int = 0
    lid_clearance: float = 0.5        # lid shell offset above the tear film
    aperture_half_width: float = 11.0
    upper_open: float = 5.5           # almond half-heights at closure 0
    lower_open: float = 4.5
    meet_line: float = -1.0           # y where the lids meet at closure 1
    join_z_frac: float = 0.35         # lid/socket boundary on the dome
    skin_albedo: float = 0.62
    skin_rgb: tuple[float, float, float] = (0.62, 0.45, 0.38)
    caruncle_radius: float = 1.8
    caruncle_side: float = 1.0        # +1 nasal corner at +x


# ------------------------------------------------------------- pose sampling

@dataclass(frozen=True)
class PoseSample:
    camera: CameraModel
    emitters: EmitterLayout
    sampler: str
    distance: float              # sampled apex standoff, mm
    offset_x: float = 0.0        # slippage, mm
    offset_y: float = 0.0
    azimuth: float = 0.0         # camera manifold angles, degrees
    elevation: float = 0.0


def _slipped(cam: CameraModel, ox: float, oy: float) -> CameraModel:
    to_world = cam.extrinsics.inverse()
    pos = to_world.trans + ox * to_world.rot[:, 0] + oy * to_world.rot[:, 1]
    ext = Transform(cam.extrinsics.rot, -(cam.extrinsics.rot @ pos))
    return replace(cam, extrinsics=ext)


def build_pose(sampler: str, width: int, height: int, distance: float,
               offset_x: float, offset_y: float, azimuth: float = 0.0,
               elevation: float = 0.0,
               apex_offset: float = DEFAULT_APEX_OFFSET,
               ring_radius: float = 12.0) -> PoseSample:
    """Deterministic pose construction from already-sampled values."""
    fx, fy, cx, cy = default_intrinsics(width, height)
    apex = np.array([0.0, 0.0, apex_offset])
    if sampler == "s-nvgaze":
        cam = CameraModel(fx, fy, cx, cy, width, height,
                          look_at(apex + np.array([0, 0, distance]), apex))
        cam = _slipped(cam, offset_x, offset_y)
        emitters = single_emitter_near(cam, layout_id="nvgaze-1")
    elif sampler == "s-openeds":
        el = math.radians(10.0)  # camera above the axis, looking down 10 deg
        v = np.array([0.0, math.sin(el), math.cos(el)])
        cam = CameraModel(fx, fy, cx, cy, width, height,
                          look_at(apex + distance * v, apex))
        cam = _slipped(cam, offset_x, offset_y)
        emitters = emitter_ring(cam, 16, ring_radius,
                                layout_id="openeds-ring16")
        elevation = -10.0
    elif sampler == "s-general":
        a, e = math.radians(azimuth), math.radians(elevation)
        v = np.array([math.sin(a) * math.cos(e), math.sin(e),
                      math.cos(a) * math.cos(e)])
        cam = CameraModel(fx, fy, cx, cy, width, height,
                          look_at((distance + apex_offset) * v, [0, 0, 0]))
        cam = _slipped(cam, offset_x, offset_y)
        emitters = single_emitter_near(cam, layout_id="general-1")
    else:
        raise ValueError(f"unknown pose sampler {sampler!r}")
    return PoseSample(cam, emitters, sampler, distance, offset_x, offset_y,
                      azimuth, elevation)


def sample_pose_s_nvgaze(rng: Rng, width: int = 640, height: int = 480,
                         apex_offset: float = DEFAULT_APEX_OFFSET) -> PoseSample:
    """Frontal on-axis camera, apex standoff U[35,45] mm, slippage U[-5,5] mm,
    one emitter near the camera."""
    dist = rng.uniform(35.0, 45.0)
    ox = rng.uniform(-5.0, 5.0)
    oy = rng.uniform(-5.0, 5.0)
    return build_pose("s-nvgaze", width, height, dist, ox, oy,
                      apex_offset=apex_offset)


def sample_pose_s_openeds(rng: Rng, width: int = 400, height: int = 640,
                          apex_offset: float = DEFAULT_APEX_OFFSET,
                          ring_radius: float = 12.0) -> PoseSample:
    """Camera tilted -10 deg in elevation (fixed), apex standoff U[35,45],
    slippage U[-5,5] mm, 16 emitters on a ring around the camera axis."""
    dist = rng.uniform(35.0, 45.0)
    ox = rng.uniform(-5.0, 5.0)
    oy = rng.uniform(-5.0, 5.0)
    return build_pose("s-openeds", width, height, dist, ox, oy,
                      apex_offset=apex_offset, ring_radius=ring_radius)


def sample_pose_s_general(rng: Rng, width: int = 640, height: int = 480,
                          apex_offset: float = DEFAULT_APEX_OFFSET) -> PoseSample:
    """Eye-centred spherical manifold: az U[-20,60], el U[-20,40] deg,
    apex standoff U[25,45] mm, aimed at the eyeball centre, jitter U[-1,1]."""
    az = rng.uniform(-20.0, 60.0)
    el = rng.uniform(-20.0, 40.0)
    dist = rng.uniform(25.0, 45.0)
    jx = rng.uniform(-1.0, 1.0)
    jy = rng.uniform(-1.0, 1.0)
    return build_pose("s-general", width, height, dist, jx, jy, az, el,
                      apex_offset=apex_offset)


POSE_SAMPLERS = {
    "s-nvgaze": sample_pose_s_nvgaze,
    "s-openeds": sample_pose_s_openeds,
    "s-general": sample_pose_s_general,
}


# ---------------------------------------------------------------- textures

@dataclass(frozen=True)
class SceneTextures:
    """Resolved texture planes, linear [0,1] RGB float arrays."""

    iris: np.ndarray      # polar map: rows = radial (pupil->limbus), cols = angle
    sclera: np.ndarray    # longitude x latitude wrap around the globe

    def __post_init__(self):
        for name in ("iris", "sclera"):
            t = np.asarray(getattr(self, name), dtype=np.float64)
            if t.ndim != 3 or t.shape[2] != 3:
                raise AssetError(f"{name} texture must be H x W x 3")
            object.__setattr__(self, name, t)


def bilinear_sample(tex: np.ndarray, u: np.ndarray, v: np.ndarray,
                    wrap_u: bool = False) -> np.ndarray:
    """Sample tex (H, W, C) at normalized (u, v) in [0,1]; returns (N, C)."""
    h, w = tex.shape[:2]
    x = u * w - 0.5
    y = v * h - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    if wrap_u:
        x0w, x1w = np.mod(x0, w), np.mod(x0 + 1, w)
    else:
        x0w, x1w = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    return ((tex[y0c, x0w] * (1 - fx) + tex[y0c, x1w] * fx) * (1 - fy)
            + (tex[y1c, x0w] * (1 - fx) + tex[y1c, x1w] * fx) * fy)


# -------------------------------------------------------------------- scene

MASK_RENDER = "render"          # everything
MASK_WITH_SKIN = "with_skin"    # no emitters
MASK_NO_SKIN = "no_skin"        # eye surfaces only


class Scene:
    """Immutable assembled world for one image."""

    def __init__(self, eye: EyeAssembly, camera: CameraModel,
                 emitters: EmitterLayout, textures: SceneTextures,
                 env: EnvironmentState | None = None,
                 glasses: EyeglassesConfig = EyeglassesConfig(),
                 head: HeadConfig = HeadConfig(), head_mesh=None):
        self.eye = eye
        self.camera = camera
        self.emitters = emitters
        self.textures = textures
        self.env = env
        self.glasses = glasses
        self.head = head
        self.head_mesh = head_mesh  # optional TriangleMesh replacing the patch

        p = eye.params
        self.gaze_rot = eye.gaze.rot                    # eye -> head
        self.lid_radius = eye.apex_offset + head.lid_clearance
        self.lid_join_z = head.join_z_frac * self.lid_radius
        self.lid_ring_radius = math.sqrt(self.lid_radius ** 2
                                         - self.lid_join_z ** 2)
        # caruncle nodule tucked into the nasal aperture corner, kept inside
        # the closed lid shell
        cr = min(head.caruncle_radius, self.lid_radius - p.eyeball_radius + 1.6)
        c_norm = p.eyeball_radius - 0.3
        cx = head.caruncle_side * 0.75 * head.aperture_half_width
        cy = head.meet_line * 0.5
        cz = math.sqrt(max(c_norm ** 2 - cx ** 2 - cy ** 2, 1.0))
        self.caruncle_center = np.array([cx, cy, cz])
        self.caruncle_radius = cr

        # head patch ellipsoid sewn to the dome ring
        self.patch_trans = 45.0
        zc = -20.0
        frac = 1.0 - (self.lid_ring_radius / self.patch_trans) ** 2
        self.patch_center = np.array([0.0, 0.0, zc])
        self.patch_cz = (self.lid_join_z - zc) / math.sqrt(frac)

        g = glasses
        self.lens_center_z = eye.apex_offset + g.standoff - g.lens_sphere_radius
        self.lens_rim_z = self.lens_center_z + math.sqrt(
            g.lens_sphere_radius ** 2 - g.aperture_radius ** 2)

        self._em_pos = emitters.positions() if emitters.emitters else np.zeros((0, 3))
        self._em_rad = np.array([e.radius for e in emitters.emitters])
        self._em_int = np.array([e.intensity for e in emitters.emitters])

    # ------------------------------------------------------------ geometry

    def _to_eye(self, o: np.ndarray, d: np.ndarray):
        return o @ self.gaze_rot, d @ self.gaze_rot

    def aperture_open(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Palpebral opening test in head-frame transverse coordinates."""
        h = self.head
        c = self.eye.params.eyelid_closure
        a = np.clip(1.0 - (x / h.aperture_half_width) ** 2, 0.0, None)
        e_u = a * ((1.0 - c) * h.upper_open + c * h.meet_line)
        e_l = a * (-(1.0 - c) * h.lower_open + c * h.meet_line)
        return (np.abs(x) < h.aperture_half_width) & (y > e_l) & (y < e_u)

    def _surface_ts(self, o: np.ndarray, d: np.ndarray, mode: str):
        """Candidate (t, sid) per surface family; +inf where no hit."""
        eye = self.eye
        p = eye.params
        n = len(o)
        out: list[tuple[np.ndarray, int]] = []

        o_e, d_e = self._to_eye(o, d)

        # cornea (tear film) in spheroid-local coords: s = apex - z_eye
        o_c = o_e.copy()
        o_c[:, 2] = eye.apex_offset - o_e[:, 2]
        d_c = d_e.copy()
        d_c[:, 2] = -d_e[:, 2]
        t_cornea, _ = optics.spheroid_hit_batch(
            o_c, d_c, p.cornea_asphericity, p.cornea_radius, z_cap=eye.limbus_sag)
        out.append((t_cornea, SurfaceId.CORNEA))

        # sclera: entering root below the limbus plane
        t_scl = optics.sphere_hit_batch(o_e, d_e, [0, 0, 0], p.eyeball_radius,
                                        which="entering")
        z = o_e[:, 2] + t_scl * d_e[:, 2]
        t_scl = np.where(z <= eye.limbus_z + 1e-9, t_scl, np.inf)
        out.append((t_scl, SurfaceId.SCLERA))

        # interior eyeball wall: far root, split retina / anterior ring
        t_int = optics.sphere_hit_batch(o_e, d_e, [0, 0, 0], p.eyeball_radius,
                                        which="exiting")
        z = o_e[:, 2] + t_int * d_e[:, 2]
        inside_wall = z <= eye.limbus_z + 1e-9
        t_ret = np.where(inside_wall & (z <= eye.iris_plane_z), t_int, np.inf)
        t_ring = np.where(inside_wall & (z > eye.iris_plane_z), t_int, np.inf)
        out.append((t_ret, SurfaceId.RETINA))
        out.append((t_ring, SurfaceId.IRIS_RING))

        # iris annulus disc with pupil aperture
        t_iris = optics.plane_hit_batch(o_e, d_e, eye.iris_plane_z)
        xi = o_e[:, 0] + t_iris * d_e[:, 0]
        yi = o_e[:, 1] + t_iris * d_e[:, 1]
        ri = np.hypot(xi, yi)
        ok = (ri >= p.pupil_radius) & (ri <= eye.iris_wall_radius + 1e-9)
        out.append((np.where(ok, t_iris, np.inf), SurfaceId.IRIS))

        if mode != MASK_NO_SKIN:
            out.extend(self._skin_ts(o, d))
            if self.glasses.present:
                out.extend(self._glasses_ts(o, d))
        if mode == MASK_RENDER and len(self._em_pos):
            t_em = optics.spheres_hit_batch(o, d, self._em_pos, self._em_rad)
            out.append((t_em, SurfaceId.EMITTER))
        return out

    def _skin_ts(self, o: np.ndarray, d: np.ndarray):
        out = []
        # lid dome: both crossings, almond cut-out on the front region
        lo, hi = optics.ellipsoid_hit_batch(o, d, [0, 0, 0],
                                            [self.lid_radius] * 3)
        t_lid = np.full(len(o), np.inf)
        t_sock = np.full(len(o), np.inf)
        for root in (lo, hi):
            pt_x = o[:, 0] + root * d[:, 0]
            pt_y = o[:, 1] + root * d[:, 1]
            pt_z = o[:, 2] + root * d[:, 2]
            valid = np.isfinite(root) & (root > optics.HIT_EPS)
            front = valid & (pt_z >= self.lid_join_z)
            lid_hit = front & ~self.aperture_open(pt_x, pt_y)
            back_hit = valid & (pt_z < self.lid_join_z)
            t_lid = np.where(lid_hit & (root < t_lid), root, t_lid)
            t_sock = np.where(back_hit & (root < t_sock), root, t_sock)
        out.append((t_lid, SurfaceId.EYELID))
        out.append((t_sock, SurfaceId.HEAD))

        # caruncle nodule
        t_car = optics.sphere_hit_batch(o, d, self.caruncle_center,
                                        self.caruncle_radius)
        out.append((t_car, SurfaceId.CARUNCLE))

        # head patch beyond the dome ring (or a user-supplied mesh)
        if self.head_mesh is not None:
            t_mesh, _ = self.head_mesh.intersect_batch(o, d)
            out.append((t_mesh, SurfaceId.HEAD))
            return out
        lo, hi = optics.ellipsoid_hit_batch(
            o, d, self.patch_center,
            [self.patch_trans, self.patch_trans, self.patch_cz])
        t_patch = np.full(len(o), np.inf)
        for root in (lo, hi):
            px = o[:, 0] + root * d[:, 0]
            py = o[:, 1] + root * d[:, 1]
            rt = np.hypot(px, py)
            valid = (np.isfinite(root) & (root > optics.HIT_EPS)
                     & (rt >= self.lid_ring_radius - 0.5))
            t_patch = np.where(valid & (root < t_patch), root, t_patch)
        out.append((t_patch, SurfaceId.HEAD))
        return out

    def _glasses_ts(self, o: np.ndarray, d: np.ndarray):
        g = self.glasses
        out = []
        center = np.array([0.0, 0.0, self.lens_center_z])
        oc = o - center
        b = 2.0 * np.sum(oc * d, axis=1)
        c = np.sum(oc * oc, axis=1) - g.lens_sphere_radius ** 2
        lo, hi = optics._quadratic_roots_batch(np.ones(len(o)), b, c)
        t_lens = np.full(len(o), np.inf)
        for root in (lo, hi):
            px = o[:, 0] + root * d[:, 0]
            py = o[:, 1] + root * d[:, 1]
            pz = o[:, 2] + root * d[:, 2]
            rt = np.hypot(px, py)
            valid = (np.isfinite(root) & (root > optics.HIT_EPS)
                     & (rt <= g.aperture_radius)
                     & (pz >= self.lens_rim_z - 1e-9))
            t_lens = np.where(valid & (root < t_lens), root, t_lens)
        out.append((t_lens, SurfaceId.GLASSES_LENS))

        t_frame = optics.torus_hit_batch(
            o, d, [0.0, 0.0, self.lens_rim_z], g.aperture_radius,
            g.frame_tube_radius)
        out.append((t_frame, SurfaceId.GLASSES_FRAME))
        return out

    def intersect_batch(self, o: np.ndarray, d: np.ndarray,
                        mode: str = MASK_RENDER):
        """Nearest hit over all surfaces; returns (t, sid) with sid = -1
        (environment) where nothing is hit."""
        t_best = np.full(len(o), np.inf)
        sid = np.full(len(o), -1, dtype=np.int16)
        for t_s, s in self._surface_ts(o, d, mode):
            closer = t_s < t_best
            t_best = np.where(closer, t_s, t_best)
            sid = np.where(closer, np.int16(int(s)), sid)
        return t_best, sid

    def occluded(self, o: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Shadow test against opaque surfaces (dielectrics pass light,
        without bending -- standard shadow-ray approximation)."""
        delta = targets - o
        dist = np.sqrt(np.sum(delta * delta, axis=1))
        d = delta / dist[:, None]
        t_best = np.full(len(o), np.inf)
        eye = self.eye
        p = eye.params
        o_e, d_e = self._to_eye(o, d)

        # eyeball wall (both sides) below the limbus plane
        lo, hi = optics.ellipsoid_hit_batch(o_e, d_e, [0, 0, 0],
                                            [p.eyeball_radius] * 3)
        for root in (lo, hi):
            z = o_e[:, 2] + root * d_e[:, 2]
            valid = (np.isfinite(root) & (root > optics.HIT_EPS)
                     & (z <= eye.limbus_z + 1e-9))
            t_best = np.where(valid & (root < t_best), root, t_best)

        t_iris = optics.plane_hit_batch(o_e, d_e, eye.iris_plane_z)
        xi = o_e[:, 0] + t_iris * d_e[:, 0]
        yi = o_e[:, 1] + t_iris * d_e[:, 1]
        ri = np.hypot(xi, yi)
        ok = (ri >= p.pupil_radius) & (ri <= eye.iris_wall_radius + 1e-9)
        t_best = np.minimum(t_best, np.where(ok, t_iris, np.inf))

        for t_s, s in self._skin_ts(o, d):
            t_best = np.minimum(t_best, t_s)
        if self.glasses.present:
            t_frame = optics.torus_hit_batch(
                o, d, [0.0, 0.0, self.lens_rim_z],
                self.glasses.aperture_radius, self.glasses.frame_tube_radius)
            t_best = np.minimum(t_best, t_frame)
        return t_best < dist - 1e-6

    # ------------------------------------------------------------- shading

    def _mesh_normals(self, pts: np.ndarray, dirs: np.ndarray | None):
        if dirs is None:
            return normalize_rows(pts)
        # recover face identity by re-tracing a short segment onto the mesh
        origins = pts - 1.0 * dirs
        _, faces = self.head_mesh.intersect_batch(origins, dirs)
        good = faces >= 0
        n = normalize_rows(pts)
        if np.any(good):
            n[good] = self.head_mesh.normals_for(faces[good])
        return n

    def normals_for(self, sid: int, pts: np.ndarray,
                    dirs: np.ndarray | None = None) -> np.ndarray:
        """Geometric outward normals in the head frame."""
        eye = self.eye
        p = eye.params
        if sid == SurfaceId.CORNEA:
            pe = pts @ self.gaze_rot
            loc = pe.copy()
            loc[:, 2] = eye.apex_offset - pe[:, 2]
            n_loc = optics.spheroid_normal_batch(loc, p.cornea_asphericity,
                                                 p.cornea_radius)
            n_eye = n_loc.copy()
            n_eye[:, 2] = -n_loc[:, 2]
            return n_eye @ self.gaze_rot.T
        if sid in (SurfaceId.SCLERA, SurfaceId.RETINA, SurfaceId.IRIS_RING):
            pe = pts @ self.gaze_rot
            return normalize_rows(pe) @ self.gaze_rot.T
        if sid == SurfaceId.IRIS:
            n_eye = np.zeros_like(pts)
            n_eye[:, 2] = 1.0
            return n_eye @ self.gaze_rot.T
        if sid in (SurfaceId.EYELID, SurfaceId.HEAD):
            # dome and patch share the nearest-quadric normal; distinguish by
            # which surface the point lies on
            r = np.sqrt(np.sum(pts * pts, axis=1))
            on_dome = np.abs(r - self.lid_radius) < 1e-6
            n_dome = normalize_rows(pts)
            if self.head_mesh is not None:
                n_mesh = self._mesh_normals(pts, dirs)
                return np.where(on_dome[:, None], n_dome, n_mesh)
            q = (pts - self.patch_center) / np.array(
                [self.patch_trans, self.patch_trans, self.patch_cz]) ** 2
            n_patch = normalize_rows(q)
            return np.where(on_dome[:, None], n_dome, n_patch)
        if sid == SurfaceId.CARUNCLE:
            return normalize_rows(pts - self.caruncle_center)
        if sid == SurfaceId.GLASSES_LENS:
            return normalize_rows(pts - np.array([0, 0, self.lens_center_z]))
        if sid == SurfaceId.GLASSES_FRAME:
            return optics.torus_normal_batch(
                pts, [0.0, 0.0, self.lens_rim_z], self.glasses.aperture_radius)
        if sid == SurfaceId.EMITTER:
            # nearest emitter centre
            dist = np.linalg.norm(pts[:, None, :] - self._em_pos[None, :, :],
                                  axis=2)
            k = np.argmin(dist, axis=1)
            return normalize_rows(pts - self._em_pos[k])
        raise ValueError(f"no normal for surface {sid}")

    def albedo_for(self, sid: int, pts: np.ndarray, channels: int) -> np.ndarray:
        """Diffuse reflectance (N, channels) in [0, 1]."""
        eye = self.eye
        p = eye.params
        if sid == SurfaceId.SCLERA:
            pe = normalize_rows(pts @ self.gaze_rot)
            lon = (np.degrees(np.arctan2(pe[:, 0], pe[:, 2]))
                   + p.sclera_rotation) / 360.0 % 1.0
            lat = 0.5 - np.arcsin(np.clip(pe[:, 1], -1, 1)) / math.pi
            rgb = bilinear_sample(self.textures.sclera, lon, lat, wrap_u=True)
        elif sid in (SurfaceId.IRIS, SurfaceId.IRIS_RING):
            pe = pts @ self.gaze_rot
            from .eye import iris_uv_batch
            u, v = iris_uv_batch(pe[:, 0], pe[:, 1], p.pupil_radius,
                                 p.iris_radius, p.iris_rotation)
            rgb = bilinear_sample(self.textures.iris, v, u, wrap_u=True)
            if sid == SurfaceId.IRIS_RING:
                rgb = rgb * 0.55
        elif sid in (SurfaceId.EYELID, SurfaceId.HEAD, SurfaceId.CARUNCLE):
            base = np.array(self.head.skin_rgb)
            if sid == SurfaceId.CARUNCLE:
                base = np.clip(base * np.array([1.15, 0.85, 0.8]), 0, 1)
            mottle = 1.0 + 0.06 * np.sin(pts[:, 0] * 1.7 + self.head.head_id) \
                * np.cos(pts[:, 1] * 2.3 - self.head.head_id * 0.7)
            rgb = base[None, :] * mottle[:, None]
            mesh = self.head_mesh
            if (sid == SurfaceId.HEAD and mesh is not None
                    and mesh.texture is not None and mesh.uvs is not None):
                # nearest-vertex uv lookup (low-poly face patches)
                r = np.sqrt(np.sum(pts * pts, axis=1))
                off_dome = np.abs(r - self.lid_radius) >= 1e-6
                if np.any(off_dome):
                    p = pts[off_dome]
                    d2 = np.sum((p[:, None, :]
                                 - mesh.vertices[None, :, :]) ** 2, axis=2)
                    uv = mesh.uvs[np.argmin(d2, axis=1)]
                    rgb[off_dome] = bilinear_sample(
                        np.asarray(mesh.texture, dtype=np.float64),
                        uv[:, 0], 1.0 - uv[:, 1])
        elif sid == SurfaceId.GLASSES_FRAME:
            rgb = np.full((len(pts), 3), 0.04)
        elif sid == SurfaceId.RETINA:
            rgb = np.full((len(pts), 3),
                          eye.materials[SurfaceId.RETINA].albedo)
        else:
            rgb = np.full((len(pts), 3), 0.5)
        rgb = np.clip(rgb, 0.0, 1.0)
        return rgb[:, :1] if channels == 1 else rgb


def intersect_scene(scene: Scene, ray: optics.Ray):
    """Scalar facade: nearest hit as (InterfaceHit, Material, class)."""
    from .eye import classify_surface
    o = ray.origin[None, :]
    d = ray.direction[None, :]
    t, sid = scene.intersect_batch(o, d, MASK_RENDER)
    if not math.isfinite(t[0]):
        return None
    s = SurfaceId(int(sid[0]))
    pt = ray.at(float(t[0]))
    n = scene.normals_for(s, pt[None, :], ray.direction[None, :])[0]
    if float(n @ ray.direction) > 0:
        n = -n
    mat = scene.eye.materials.get(s)
    if mat is None:
        mat = _scene_material(scene, s)
    return optics.InterfaceHit(float(t[0]), pt, n, s), mat, classify_surface(s)


def _scene_material(scene: Scene, sid: SurfaceId) -> Material:
    if sid in (SurfaceId.EYELID, SurfaceId.HEAD, SurfaceId.CARUNCLE):
        return Material(MaterialKind.SKIN_DIFFUSE, albedo=scene.head.skin_albedo)
    if sid == SurfaceId.GLASSES_LENS:
        return Material(MaterialKind.GLASS_REFLECTIVE,
                        refractive_index=scene.glasses.refractive_index)
    if sid == SurfaceId.GLASSES_FRAME:
        return Material(MaterialKind.SKIN_DIFFUSE, albedo=0.04)
    if sid == SurfaceId.EMITTER:
        return Material(MaterialKind.EMISSIVE)
    raise ValueError(f"no material for {sid}")

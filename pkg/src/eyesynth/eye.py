"""Parametric eye: corneal spheroid cap, sclera, iris aperture, retina.

The eye-local frame has the eyeball centre at the origin and +z pointing
out of the eye (toward a frontal camera).  The corneal spheroid lives in
its own local frame (apex at origin, +z into the eye); conversion is
s = apex_offset - z_eye on the shared transverse coordinates.

The corneal cap is clipped where it meets the eyeball sphere (the limbus).
The apex standoff is derived so that the limbus circle radius equals the
iris disc radius, which keeps the iris annulus, the corneal rim and the
sclera boundary mutually consistent for any asphericity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .optics import SurfaceId, Transform

CORNEA_REFRACTIVE_INDEX = 1.3375
ASPHERICITY_CHOICES = (-0.130, -0.250, -0.370)

# bright-pupil lobe roughness: calibrated so the retro response falls
# below 10% at 2.25 degrees of camera/emitter separation
DEFAULT_RETINA_ROUGHNESS = 0.025


class EyeParamError(ValueError):
    """A parameter set violates the eye model invariants."""


class SemanticClass(IntEnum):
    BACKGROUND_SKIN = 0
    SCLERA = 1
    IRIS = 2
    PUPIL = 3


# visualization palette, RGB
CLASS_PALETTE = {
    SemanticClass.BACKGROUND_SKIN: (0, 0, 0),
    SemanticClass.SCLERA: (0, 0, 255),
    SemanticClass.IRIS: (0, 255, 0),
    SemanticClass.PUPIL: (255, 0, 0),
}


class MaterialKind(IntEnum):
    TEAR_FILM_DIELECTRIC = 0
    DIFFUSE_TEXTURED = 1
    RETROREFLECTIVE = 2
    SKIN_DIFFUSE = 3
    GLASS_REFLECTIVE = 4
    EMISSIVE = 5


@dataclass(frozen=True)
class Material:
    kind: MaterialKind
    refractive_index: float = 1.0
    albedo: float = 1.0
    texture_id: str | None = None
    retina_roughness: float = DEFAULT_RETINA_ROUGHNESS

    def __post_init__(self):
        if self.kind in (MaterialKind.TEAR_FILM_DIELECTRIC,
                         MaterialKind.GLASS_REFLECTIVE):
            if self.refractive_index <= 1.0:
                raise EyeParamError("dielectric refractive index must exceed 1")
        if not 0.0 <= self.albedo <= 1.0 and self.kind != MaterialKind.EMISSIVE:
            raise EyeParamError("albedo out of [0, 1]")


@dataclass(frozen=True)
class EyeParams:
    cornea_radius: float = 7.8              # apical radius of curvature, mm
    cornea_asphericity: float = -0.250
    eyeball_radius: float = 12.0
    iris_radius: float = 6.0
    pupil_radius: float = 2.5               # mm, valid range [1, 4]
    anterior_chamber_depth: float = 3.6     # iris plane depth behind the apex
    eyelid_closure: float = 0.0             # 0 open .. 1 closed
    iris_texture_id: str = "iris00"
    iris_rotation: float = 0.0              # degrees
    sclera_rotation: float = 0.0
    retina_roughness: float = DEFAULT_RETINA_ROUGHNESS
    gaze_azimuth: float = 0.0               # degrees, + toward +x
    gaze_elevation: float = 0.0             # degrees, + up

    def validate(self) -> None:
        if self.cornea_radius <= 0 or self.eyeball_radius <= 0:
            raise EyeParamError("radii must be positive")
        if not -1.0 <= self.cornea_asphericity <= 1.0:
            raise EyeParamError("asphericity out of [-1, 1]")
        if not 0 < self.pupil_radius < self.iris_radius:
            raise EyeParamError("pupil radius must be in (0, iris_radius)")
        if self.iris_radius >= self.eyeball_radius:
            raise EyeParamError("iris radius must be below the eyeball radius")
        if not 0.0 <= self.eyelid_closure <= 1.0:
            raise EyeParamError("eyelid closure out of [0, 1]")
        if self.anterior_chamber_depth <= 0:
            raise EyeParamError("anterior chamber depth must be positive")
        # the corneal sag at the limbus must be shallower than the iris plane
        s_l = corneal_sag(self.iris_radius, self.cornea_asphericity,
                          self.cornea_radius)
        if s_l is None:
            raise EyeParamError("cornea too flat to reach the limbus radius")
        if self.anterior_chamber_depth <= s_l:
            raise EyeParamError("iris plane lies inside the corneal cap")


def corneal_sag(r_transverse: float, asphericity: float,
                apex_radius: float) -> float | None:
    """Depth z of the spheroid surface at transverse radius r (smaller root)."""
    p = 1.0 + asphericity
    disc = apex_radius * apex_radius - p * r_transverse * r_transverse
    if disc < 0.0:
        return None
    if abs(p) < 1e-12:
        return r_transverse * r_transverse / (2.0 * apex_radius)
    return (apex_radius - math.sqrt(disc)) / p


@dataclass(frozen=True)
class EyeAssembly:
    """Closed optical eye with derived junction geometry.

    All derived lengths are in the eye-local frame described in the module
    docstring; `gaze` maps eye-local to head coordinates.
    """

    params: EyeParams
    apex_offset: float          # eyeball centre -> corneal apex distance
    limbus_radius: float        # junction circle radius
    limbus_sag: float           # spheroid-local z of the junction
    limbus_z: float             # eye-frame z of the junction plane
    iris_plane_z: float         # eye-frame z of the iris disc
    iris_wall_radius: float     # sphere cross-section radius at the iris plane
    gaze: Transform             # eye-local -> head frame rotation
    materials: dict[SurfaceId, Material] = field(default_factory=dict)

    @property
    def cornea_index(self) -> float:
        return self.materials[SurfaceId.CORNEA].refractive_index

    def apex_point_head(self) -> np.ndarray:
        """Corneal apex in head coordinates (moves with gaze)."""
        return self.gaze.apply_point(np.array([0.0, 0.0, self.apex_offset]))


def gaze_transform(azimuth_deg: float, elevation_deg: float) -> Transform:
    """Rotation about the eyeball centre; elevation applied first, then azimuth."""
    return Transform.rotation_y(azimuth_deg).compose(
        Transform.rotation_x(-elevation_deg))


def build_eye(params: EyeParams) -> EyeAssembly:
    params.validate()
    q = params.cornea_asphericity
    cr = params.cornea_radius
    er = params.eyeball_radius

    # limbus: corneal cap meets the eyeball sphere at the iris disc radius
    r_l = params.iris_radius
    s_l = corneal_sag(r_l, q, cr)
    assert s_l is not None  # validate() guarantees it
    z_l = math.sqrt(er * er - r_l * r_l)
    apex_offset = z_l + s_l

    iris_z = apex_offset - params.anterior_chamber_depth
    if not -er < iris_z < z_l:
        raise EyeParamError("iris plane must sit between limbus and retina")
    wall_r = math.sqrt(er * er - iris_z * iris_z)

    materials = {
        SurfaceId.CORNEA: Material(MaterialKind.TEAR_FILM_DIELECTRIC,
                                   refractive_index=CORNEA_REFRACTIVE_INDEX),
        SurfaceId.SCLERA: Material(MaterialKind.DIFFUSE_TEXTURED, albedo=0.95,
                                   texture_id="sclera00"),
        SurfaceId.IRIS: Material(MaterialKind.DIFFUSE_TEXTURED, albedo=0.55,
                                 texture_id=params.iris_texture_id),
        SurfaceId.IRIS_RING: Material(MaterialKind.DIFFUSE_TEXTURED, albedo=0.35,
                                      texture_id=params.iris_texture_id),
        SurfaceId.RETINA: Material(MaterialKind.RETROREFLECTIVE, albedo=0.02,
                                   retina_roughness=params.retina_roughness),
    }

    return EyeAssembly(
        params=params,
        apex_offset=apex_offset,
        limbus_radius=r_l,
        limbus_sag=s_l,
        limbus_z=z_l,
        iris_plane_z=iris_z,
        iris_wall_radius=wall_r,
        gaze=gaze_transform(params.gaze_azimuth, params.gaze_elevation),
        materials=materials,
    )


def with_gaze(assembly: EyeAssembly, azimuth_deg: float,
              elevation_deg: float) -> EyeAssembly:
    p = replace(assembly.params, gaze_azimuth=azimuth_deg,
                gaze_elevation=elevation_deg)
    return replace(assembly, params=p,
                   gaze=gaze_transform(azimuth_deg, elevation_deg))


def iris_uv(point_xy, pupil_radius: float, iris_radius: float,
            iris_rotation_deg: float = 0.0) -> tuple[float, float]:
    """Annulus texture coordinates for a point in the iris plane.

    The radial coordinate stretches between the live pupil boundary (u=0)
    and the fixed outer iris boundary (u=1), so pupil dilation deforms the
    texture instead of cropping it.
    """
    x, y = float(point_xy[0]), float(point_xy[1])
    r = math.hypot(x, y)
    if r < pupil_radius - 1e-9 or r > iris_radius + 1e-9:
        raise ValueError(f"point at r={r:.6f} outside iris annulus "
                         f"[{pupil_radius}, {iris_radius}]")
    u = (r - pupil_radius) / (iris_radius - pupil_radius)
    v = (math.degrees(math.atan2(y, x)) + iris_rotation_deg) / 360.0 % 1.0
    return min(max(u, 0.0), 1.0), v


def iris_uv_batch(x: np.ndarray, y: np.ndarray, pupil_radius: float,
                  iris_radius: float, iris_rotation_deg: float = 0.0):
    r = np.hypot(x, y)
    u = np.clip((r - pupil_radius) / (iris_radius - pupil_radius), 0.0, 1.0)
    v = (np.degrees(np.arctan2(y, x)) + iris_rotation_deg) / 360.0 % 1.0
    return u, v


def eyelid_closure_for_gaze(elevation_deg: float, c0: float = 0.15,
                            c1: float = 0.005) -> float:
    """Lid closure as a linear function of vertical gaze, clamped to [0, 1]."""
    return min(max(c0 - c1 * elevation_deg, 0.0), 1.0)


def retroreflect_weight(angle_sep, m_retina: float = DEFAULT_RETINA_ROUGHNESS):
    """Bright-pupil lobe: exp(-tan^2(sep)/m^2), normalized to peak 1 at 0."""
    t = np.tan(angle_sep)
    w = np.exp(-(t * t) / (m_retina * m_retina))
    return float(w) if np.ndim(w) == 0 else w


_TRANSPARENT = {SurfaceId.CORNEA, SurfaceId.GLASSES_LENS}

_CLASS_OF = {
    SurfaceId.SCLERA: SemanticClass.SCLERA,
    SurfaceId.IRIS: SemanticClass.IRIS,
    SurfaceId.IRIS_RING: SemanticClass.IRIS,
    SurfaceId.RETINA: SemanticClass.PUPIL,
    SurfaceId.EYELID: SemanticClass.BACKGROUND_SKIN,
    SurfaceId.CARUNCLE: SemanticClass.BACKGROUND_SKIN,
    SurfaceId.HEAD: SemanticClass.BACKGROUND_SKIN,
    SurfaceId.GLASSES_FRAME: SemanticClass.BACKGROUND_SKIN,
    SurfaceId.EMITTER: SemanticClass.BACKGROUND_SKIN,
    SurfaceId.ENVIRONMENT: SemanticClass.BACKGROUND_SKIN,
}


def classify_surface(surface_id: SurfaceId) -> SemanticClass | None:
    """Semantic class of a surface; None marks transparent pass-through
    (tear film over the cornea, eyeglass lens), whose classification is the
    class of whatever lies behind."""
    sid = SurfaceId(surface_id)
    if sid in _TRANSPARENT:
        return None
    try:
        return _CLASS_OF[sid]
    except KeyError:
        raise ValueError(f"unknown surface id {surface_id!r}") from None


def ir_from_rgb(texture: np.ndarray) -> np.ndarray:
    """Infrared appearance proxy: keep the red channel of a color texture."""
    tex = np.asarray(texture)
    if tex.ndim != 3 or tex.shape[2] < 3:
        raise ValueError("expected an H x W x 3 texture")
    return tex[:, :, 0].copy()

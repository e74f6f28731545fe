"""Monte Carlo path-tracing integrator.

Wavefront style: every tile traces all its pixel samples as one batch of
rays through a bounce loop, with boolean-mask dispatch per surface kind.
Every random draw is a pure function of (seed, image id, pixel, sample,
draw index), so output is bit-identical for any tile size, worker count,
or scheduling order.

Light transport: emitters are sampled by next-event estimation at diffuse
and retina hits; the environment is integrated by cosine-sampled bounce
rays escaping the scene; tear film and eyeglass coatings split
reflect/transmit by one-sample Fresnel roulette, which is what forms the
corneal glints and environment reflections.  The retina adds the
bright-pupil term: a retroreflective lobe around the reversed viewing ray
weighted by the camera/emitter separation angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import optics, rng as rnglib
from .eye import (EyeParams, SemanticClass, classify_surface,
                  retroreflect_weight)
from .optics import SurfaceId, normalize_rows
from .scene import (MASK_NO_SKIN, MASK_RENDER, MASK_WITH_SKIN, Scene,
                    camera_ray_batch, project_point)

RETRO_STRENGTH = 0.9          # retina retroreflective peak reflectivity
_MASK_TRACE_MAX_STEPS = 8


class RenderInternalError(RuntimeError):
    """Non-finite radiance was produced; the render is aborted."""


@dataclass(frozen=True)
class RenderConfig:
    width: int = 640
    height: int = 480
    samples_per_pixel: int = 200
    max_bounces: int = 6
    channels: int = 1            # 1 = IR, 3 = RGB
    seed: int = 0
    image_id: int = 0
    tile_size: int = 32
    exposure: float | None = None  # None -> auto-calibrate
    # firefly suppression for indirect environment hits; None disables
    indirect_clamp: float | None = 8.0

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be >= 1")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 (IR) or 3 (RGB)")
        if self.tile_size < 1:
            raise ValueError("tile size must be >= 1")


@dataclass(frozen=True)
class MetadataRecord:
    image_id: int
    eye: dict
    gaze_azimuth: float
    gaze_elevation: float
    pupil_center_3d: tuple[float, float, float]   # camera frame, mm
    iris_center_3d: tuple[float, float, float]
    pupil_center_2d: tuple[float, float]          # px; NaN when invalid
    iris_center_2d: tuple[float, float]
    projection_valid: bool
    intrinsics: tuple[float, float, float, float]
    extrinsics_rot: list
    extrinsics_trans: list
    resolution: tuple[int, int]
    emitter_layout: str
    environment: dict | None
    glasses: bool
    eyelid_closure: float
    seed: int
    head_id: int = 0

    def to_dict(self) -> dict:
        d = {"schema_version": "1.0"}
        d.update(self.__dict__)
        return d

    @staticmethod
    def from_dict(d: dict) -> "MetadataRecord":
        from .io import check_schema_version
        check_schema_version(d)
        fields = {k: v for k, v in d.items() if k != "schema_version"}
        for key in ("pupil_center_3d", "iris_center_3d", "pupil_center_2d",
                    "iris_center_2d", "intrinsics", "resolution"):
            fields[key] = tuple(fields[key])
        return MetadataRecord(**fields)


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray            # uint8 (H, W) or (H, W, 3)
    mask_with_skin: np.ndarray   # uint8 class codes
    mask_without_skin: np.ndarray
    metadata: MetadataRecord


# --------------------------------------------------------------- integrator

class _Wavefront:
    """Per-tile path state with counter-based per-ray RNG."""

    def __init__(self, scene: Scene, cfg: RenderConfig, px: np.ndarray,
                 py: np.ndarray, sample_idx: np.ndarray):
        self.scene = scene
        self.cfg = cfg
        self.n = len(px)
        self.state = rnglib.hash_streams(cfg.seed, np.full(self.n, cfg.image_id),
                                         px, py, sample_idx)
        self.counter = np.zeros(self.n, dtype=np.uint64)

    def draw(self, idx: np.ndarray) -> np.ndarray:
        v = rnglib.uniform_from_state(self.state[idx], self.counter[idx])
        self.counter[idx] += np.uint64(1)
        return v


def _render_tile(scene: Scene, cfg: RenderConfig, x0: int, y0: int,
                 tw: int, th: int) -> np.ndarray:
    """Linear radiance block (th, tw, channels), pre-exposure."""
    spp = cfg.samples_per_pixel
    ch = cfg.channels
    ys, xs = np.mgrid[y0:y0 + th, x0:x0 + tw]
    px = np.repeat(xs.ravel(), spp)
    py = np.repeat(ys.ravel(), spp)
    sidx = np.tile(np.arange(spp), tw * th)
    wf = _Wavefront(scene, cfg, px, py, sidx)
    n = wf.n

    all_idx = np.arange(n)
    jx = wf.draw(all_idx)
    jy = wf.draw(all_idx)
    o, d = camera_ray_batch(scene.camera, px.astype(float), py.astype(float),
                            jx, jy)

    radiance = np.zeros((n, ch))
    throughput = np.ones((n, ch))
    specular_chain = np.ones(n, dtype=bool)
    # in-air incident geometry at the last transmission into the eye; the
    # bright-pupil separation is the camera/emitter angle measured there
    entry_dir = d.copy()
    entry_pt = o.copy()
    active = np.arange(n)

    em_pos = scene._em_pos
    em_int = scene._em_int
    n_emit = len(em_pos)
    nc = scene.eye.cornea_index
    retina_mat = scene.eye.materials[SurfaceId.RETINA]

    for _ in range(cfg.max_bounces):
        if len(active) == 0:
            break
        t, sid = scene.intersect_batch(o[active], d[active], MASK_RENDER)

        # environment on miss
        miss = ~np.isfinite(t)
        if np.any(miss):
            gidx = active[miss]
            if scene.env is not None:
                from .scene import env_radiance_batch
                lv = _to_ch(env_radiance_batch(scene.env, d[gidx]), ch)
                if cfg.indirect_clamp is not None:
                    # clamp only after a diffuse bounce; camera/specular
                    # paths keep full dynamic range (glints must saturate)
                    dif = ~specular_chain[gidx]
                    lv[dif] = np.minimum(lv[dif], cfg.indirect_clamp)
                radiance[gidx] += throughput[gidx] * lv
        keep = ~miss
        active = active[keep]
        if len(active) == 0:
            break
        t = t[keep]
        sid = sid[keep]
        pts = o[active] + t[:, None] * d[active]

        survivors = np.zeros(len(active), dtype=bool)

        for s in np.unique(sid):
            sel = np.nonzero(sid == s)[0]
            gidx = active[sel]
            p_s = pts[sel]
            d_s = d[gidx]
            s_id = SurfaceId(int(s))

            if s_id == SurfaceId.EMITTER:
                spec = specular_chain[gidx]
                if np.any(spec):
                    ksel = gidx[spec]
                    dist = np.linalg.norm(p_s[spec][:, None, :]
                                          - em_pos[None, :, :], axis=2)
                    near = np.argmin(dist, axis=1)
                    l_e = np.array([scene.emitters.emitters[k].radiance
                                    for k in near])
                    radiance[ksel] += throughput[ksel] * l_e[:, None]
                continue  # path ends at the light

            n_out = scene.normals_for(s_id, p_s, d_s)
            facing = np.sum(n_out * d_s, axis=1) < 0.0
            n_sh = np.where(facing[:, None], n_out, -n_out)

            if s_id == SurfaceId.CORNEA:
                entering = facing
                n1 = np.where(entering, 1.0, nc)
                n2 = np.where(entering, nc, 1.0)
                cos_i = -np.sum(d_s * n_sh, axis=1)
                refl = _fresnel_vec(cos_i, n1, n2)
                u = wf.draw(gidx)
                do_reflect = u < refl
                new_d = np.where(
                    do_reflect[:, None],
                    optics.reflect_batch(d_s, n_sh),
                    _refract_or_reflect(d_s, n_sh, n1 / n2))
                transmitted = ~do_reflect & ~_tir_mask(d_s, n_sh, n1 / n2)
                went_in = transmitted & entering
                if np.any(went_in):
                    gi = gidx[went_in]
                    entry_dir[gi] = d_s[went_in]
                    entry_pt[gi] = p_s[went_in]
                o[gidx] = p_s
                d[gidx] = new_d
                specular_chain[gidx] = True
                survivors[sel] = True
                continue

            if s_id == SurfaceId.GLASSES_LENS:
                cos_i = -np.sum(d_s * n_sh, axis=1)
                refl = _fresnel_vec(cos_i, 1.0, scene.glasses.refractive_index)
                u = wf.draw(gidx)
                do_reflect = u < refl
                new_d = np.where(do_reflect[:, None],
                                 optics.reflect_batch(d_s, n_sh), d_s)
                # transmitted rays pass unbent (reflection-only lens)
                o[gidx] = p_s + np.where(do_reflect[:, None], 0.0, 1e-6) * d_s
                d[gidx] = new_d
                specular_chain[gidx] = True
                survivors[sel] = True
                continue

            if s_id == SurfaceId.RETINA:
                # bright-pupil: retro lobe + faint diffuse, then absorb
                if n_emit:
                    u = wf.draw(gidx)
                    k = np.minimum((u * n_emit).astype(np.int64), n_emit - 1)
                    delta = em_pos[k] - p_s
                    dist = np.linalg.norm(delta, axis=1)
                    to_em = delta / dist[:, None]
                    blocked = scene.occluded(p_s, em_pos[k])
                    # separation between view ray and emitter, measured in
                    # air at the corneal entry point (refraction-consistent)
                    to_em_air = normalize_rows(em_pos[k] - entry_pt[gidx])
                    cos_sep = np.clip(np.sum(-entry_dir[gidx] * to_em_air,
                                             axis=1), -1.0, 1.0)
                    sep = np.arccos(cos_sep)
                    w_retro = retroreflect_weight(sep, retina_mat.retina_roughness)
                    cos_n = np.clip(np.sum(n_sh * to_em, axis=1), 0.0, None)
                    e_irr = em_int[k] / (dist * dist)
                    lobe = (RETRO_STRENGTH * w_retro
                            + retina_mat.albedo / math.pi * cos_n)
                    contrib = (n_emit * e_irr * lobe * (~blocked)).astype(float)
                    radiance[gidx] += throughput[gidx] * contrib[:, None]
                continue  # absorbed

            # diffuse opaque surfaces; sclera carries the tear-film coat
            if s_id == SurfaceId.SCLERA:
                cos_i = -np.sum(d_s * n_sh, axis=1)
                refl = _fresnel_vec(cos_i, 1.0, nc)
                u = wf.draw(gidx)
                gloss = u < refl
                if np.any(gloss):
                    gi = sel[gloss]
                    gg = gidx[gloss]
                    o[gg] = p_s[gloss]
                    d[gg] = optics.reflect_batch(d_s[gloss], n_sh[gloss])
                    specular_chain[gg] = True
                    survivors[gi] = True
                diff = ~gloss
                if not np.any(diff):
                    continue
                sel = sel[diff]
                gidx = gidx[diff]
                p_s = p_s[diff]
                d_s = d_s[diff]
                n_sh = n_sh[diff]

            albedo = scene.albedo_for(s_id, p_s, ch)
            if n_emit:
                u = wf.draw(gidx)
                k = np.minimum((u * n_emit).astype(np.int64), n_emit - 1)
                delta = em_pos[k] - p_s
                dist = np.linalg.norm(delta, axis=1)
                to_em = delta / dist[:, None]
                cos_n = np.sum(n_sh * to_em, axis=1)
                lit = cos_n > 0.0
                if np.any(lit):
                    blocked = np.ones(len(gidx), dtype=bool)
                    blocked[lit] = scene.occluded(p_s[lit], em_pos[k][lit])
                    e_irr = np.where(lit & ~blocked,
                                     em_int[k] * np.clip(cos_n, 0, None)
                                     / (dist * dist), 0.0)
                    radiance[gidx] += (throughput[gidx] * albedo / math.pi
                                       * (n_emit * e_irr)[:, None])
            # indirect: cosine bounce carries environment light
            u1 = wf.draw(gidx)
            u2 = wf.draw(gidx)
            d_new = optics.cosine_hemisphere_batch(u1, u2, n_sh)
            o[gidx] = p_s
            d[gidx] = d_new
            throughput[gidx] *= albedo
            specular_chain[gidx] = False
            survivors[sel] = True

        active = active[survivors]

    if not np.all(np.isfinite(radiance)):
        raise RenderInternalError("non-finite radiance in tile "
                                  f"({x0},{y0},{tw},{th})")
    block = radiance.reshape(th, tw, cfg.samples_per_pixel, ch)
    return block.mean(axis=2)


def _to_ch(rgb: np.ndarray, ch: int) -> np.ndarray:
    return rgb[:, :1] if ch == 1 else rgb


def _fresnel_vec(cos_i, n1, n2):
    cos_i = np.clip(cos_i, 0.0, 1.0)
    sin2_t = (n1 / n2) ** 2 * (1.0 - cos_i ** 2)
    tir = sin2_t >= 1.0
    cos_t = np.sqrt(np.clip(1.0 - sin2_t, 0.0, None))
    r_par = (n2 * cos_i - n1 * cos_t) / (n2 * cos_i + n1 * cos_t)
    r_perp = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t)
    return np.where(tir, 1.0, 0.5 * (r_par ** 2 + r_perp ** 2))


def _tir_mask(d, n, eta):
    cos_i = -np.sum(d * n, axis=1)
    return (np.asarray(eta) ** 2) * (1.0 - cos_i ** 2) > 1.0


def _refract_or_reflect(d, n, eta):
    out, tir = optics.refract_batch(d, n, eta)
    return np.where(tir[:, None], optics.reflect_batch(d, n), out)


# ---------------------------------------------------------------- tiling

def _tiles(width, height, size):
    for y0 in range(0, height, size):
        for x0 in range(0, width, size):
            yield x0, y0, min(size, width - x0), min(size, height - y0)


def _check_resolution(scene: Scene, cfg: RenderConfig) -> None:
    if (scene.camera.width, scene.camera.height) != (cfg.width, cfg.height):
        raise ValueError(
            f"camera resolution {scene.camera.width}x{scene.camera.height} "
            f"does not match render config {cfg.width}x{cfg.height}")


def render_linear(scene: Scene, cfg: RenderConfig) -> np.ndarray:
    """Full-frame linear radiance (H, W, C), single worker."""
    _check_resolution(scene, cfg)
    out = np.zeros((cfg.height, cfg.width, cfg.channels))
    for x0, y0, tw, th in _tiles(cfg.width, cfg.height, cfg.tile_size):
        out[y0:y0 + th, x0:x0 + tw] = _render_tile(scene, cfg, x0, y0, tw, th)
    return out


_WORKER_STATE: dict = {}


def _worker_init(scene, cfg):
    _WORKER_STATE["scene"] = scene
    _WORKER_STATE["cfg"] = cfg


def _worker_tile(args):
    x0, y0, tw, th = args
    block = _render_tile(_WORKER_STATE["scene"], _WORKER_STATE["cfg"],
                         x0, y0, tw, th)
    return x0, y0, block


def render_linear_parallel(scene: Scene, cfg: RenderConfig,
                           workers: int) -> np.ndarray:
    if workers <= 1:
        return render_linear(scene, cfg)
    out = np.zeros((cfg.height, cfg.width, cfg.channels))
    tiles = list(_tiles(cfg.width, cfg.height, cfg.tile_size))
    ctx = get_context("fork")
    with ctx.Pool(workers, initializer=_worker_init,
                  initargs=(scene, cfg)) as pool:
        for x0, y0, block in pool.imap_unordered(_worker_tile, tiles):
            out[y0:y0 + block.shape[0], x0:x0 + block.shape[1]] = block
    return out


# ------------------------------------------------------------- tone mapping

def calibrate_exposure(scene: Scene, cfg: RenderConfig,
                       probe_size: int = 48) -> float:
    """Scale such that the 99th-percentile linear value lands near 255.

    Probes a downscaled frame with the same field of view.
    """
    from dataclasses import replace as dc_replace
    cam = scene.camera
    sx = probe_size / cam.width
    sy = probe_size / cam.height
    probe_cam = dc_replace(cam, fx=cam.fx * sx, fy=cam.fy * sy,
                           cx=cam.cx * sx, cy=cam.cy * sy,
                           width=probe_size, height=probe_size)
    probe_scene = Scene(scene.eye, probe_cam, scene.emitters, scene.textures,
                        env=scene.env, glasses=scene.glasses, head=scene.head)
    probe = RenderConfig(width=probe_size, height=probe_size,
                         samples_per_pixel=8, max_bounces=cfg.max_bounces,
                         channels=cfg.channels, seed=cfg.seed,
                         image_id=cfg.image_id, tile_size=probe_size,
                         exposure=1.0)
    lin = render_linear(probe_scene, probe)
    p99 = float(np.percentile(lin, 99.0))
    if p99 <= 0.0:
        return 1.0
    return 0.98 / p99


def quantize(linear: np.ndarray, exposure: float) -> np.ndarray:
    """Linear exposure, clamp, 8-bit round-half-away-from-zero."""
    v = np.clip(linear * exposure, 0.0, 1.0)
    img = np.floor(v * 255.0 + 0.5).astype(np.uint8)
    return img[:, :, 0] if img.shape[2] == 1 else img


# ------------------------------------------------------------------- masks

def _trace_mask(scene: Scene, cfg: RenderConfig, mode: str) -> np.ndarray:
    """One refraction-following primary ray per pixel centre, no lighting."""
    _check_resolution(scene, cfg)
    ys, xs = np.mgrid[0:cfg.height, 0:cfg.width]
    px = xs.ravel().astype(float)
    py = ys.ravel().astype(float)
    o, d = camera_ray_batch(scene.camera, px, py,
                            np.full(px.shape, 0.5), np.full(py.shape, 0.5))
    n = len(px)
    cls = np.zeros(n, dtype=np.uint8)   # background unless an eye hit lands
    active = np.arange(n)
    nc = scene.eye.cornea_index

    for _ in range(_MASK_TRACE_MAX_STEPS):
        if len(active) == 0:
            break
        t, sid = scene.intersect_batch(o[active], d[active], mode)
        miss = ~np.isfinite(t)
        active = active[~miss]
        if len(active) == 0:
            break
        t = t[~miss]
        sid = sid[~miss]
        pts = o[active] + t[:, None] * d[active]

        next_active = np.zeros(len(active), dtype=bool)
        for s in np.unique(sid):
            sel = np.nonzero(sid == s)[0]
            gidx = active[sel]
            s_id = SurfaceId(int(s))
            semantic = classify_surface(s_id)
            if semantic is not None:
                cls[gidx] = int(semantic)
                continue
            p_s = pts[sel]
            d_s = d[gidx]
            if s_id == SurfaceId.GLASSES_LENS:
                o[gidx] = p_s + 1e-6 * d_s
                next_active[sel] = True
                continue
            # cornea: follow the refracted path (reflect on TIR)
            n_out = scene.normals_for(s_id, p_s, d_s)
            facing = np.sum(n_out * d_s, axis=1) < 0.0
            n_sh = np.where(facing[:, None], n_out, -n_out)
            eta = np.where(facing, 1.0 / nc, nc)
            new_d, tir = optics.refract_batch(d_s, n_sh, eta)
            new_d = np.where(tir[:, None], optics.reflect_batch(d_s, n_sh),
                             new_d)
            o[gidx] = p_s
            d[gidx] = new_d
            next_active[sel] = True
        active = active[next_active]

    return cls.reshape(cfg.height, cfg.width)


def render_masks(scene: Scene, cfg: RenderConfig):
    """(mask_with_skin, mask_without_skin) -- pure functions of geometry."""
    return (_trace_mask(scene, cfg, MASK_WITH_SKIN),
            _trace_mask(scene, cfg, MASK_NO_SKIN))


# ---------------------------------------------------------------- metadata

def compute_metadata(scene: Scene, cfg: RenderConfig,
                     head_id: int = 0) -> MetadataRecord:
    eye = scene.eye
    cam = scene.camera
    pupil_head = eye.gaze.apply_point([0.0, 0.0, eye.iris_plane_z])
    iris_head = pupil_head  # concentric discs share their centre
    pupil_cam = cam.extrinsics.apply_point(pupil_head)
    iris_cam = cam.extrinsics.apply_point(iris_head)
    ppx, ppy, ok_p = project_point(cam, pupil_head)
    ipx, ipy, ok_i = project_point(cam, iris_head)
    env = scene.env
    return MetadataRecord(
        image_id=cfg.image_id,
        eye=_eye_params_dict(eye.params),
        gaze_azimuth=eye.params.gaze_azimuth,
        gaze_elevation=eye.params.gaze_elevation,
        pupil_center_3d=tuple(float(v) for v in pupil_cam),
        iris_center_3d=tuple(float(v) for v in iris_cam),
        pupil_center_2d=(float(ppx), float(ppy)),
        iris_center_2d=(float(ipx), float(ipy)),
        projection_valid=bool(ok_p and ok_i),
        intrinsics=cam.intrinsics_tuple(),
        extrinsics_rot=cam.extrinsics.rot.tolist(),
        extrinsics_trans=cam.extrinsics.trans.tolist(),
        resolution=(cfg.width, cfg.height),
        emitter_layout=scene.emitters.layout_id,
        environment=None if env is None else {
            "id": env.map_id,
            "rotation": [env.rotation_y, env.rotation_x, env.rotation_z],
            "intensity_scale": env.intensity_scale,
        },
        glasses=scene.glasses.present,
        eyelid_closure=eye.params.eyelid_closure,
        seed=cfg.seed,
        head_id=head_id,
    )


def _eye_params_dict(p: EyeParams) -> dict:
    return {
        "cornea_radius": p.cornea_radius,
        "cornea_asphericity": p.cornea_asphericity,
        "eyeball_radius": p.eyeball_radius,
        "iris_radius": p.iris_radius,
        "pupil_radius": p.pupil_radius,
        "anterior_chamber_depth": p.anterior_chamber_depth,
        "eyelid_closure": p.eyelid_closure,
        "iris_texture_id": p.iris_texture_id,
        "iris_rotation": p.iris_rotation,
        "sclera_rotation": p.sclera_rotation,
        "retina_roughness": p.retina_roughness,
        "gaze_azimuth": p.gaze_azimuth,
        "gaze_elevation": p.gaze_elevation,
    }


# ------------------------------------------------------------------ driver

def render(scene: Scene, cfg: RenderConfig, workers: int = 1,
           head_id: int = 0) -> RenderOutput:
    exposure = cfg.exposure
    if exposure is None:
        exposure = calibrate_exposure(scene, cfg)
    linear = render_linear_parallel(scene, cfg, workers)
    image = quantize(linear, exposure)
    with_skin, without_skin = render_masks(scene, cfg)
    meta = compute_metadata(scene, cfg, head_id=head_id)
    return RenderOutput(image, with_skin, without_skin, meta)


def render_tiles_parallel(scene: Scene, cfg: RenderConfig,
                          worker_count: int) -> RenderOutput:
    """Identical output to a single-worker render, by construction."""
    return render(scene, cfg, workers=worker_count)

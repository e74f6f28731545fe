"""Dataset recipes: named sampling distributions, exact composition quotas,
deterministic plans, generation, and the stratified train/validation split.

Quotas (open/partial/closed lids, eyeglasses, corneal asphericity) are
assigned by shuffled lists rather than per-image coin flips, so any plan
realizes its composition exactly.  Head diversity is emulated by parameter
variation over a pool of head identities: ids 0..17 generate training
imagery, 18..23 are reserved for test imagery, and the two pools never
mix inside one dataset.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

from .assets import AssetPack, env_ids
from .eye import ASPHERICITY_CHOICES, EyeParams, build_eye, eyelid_closure_for_gaze
from .render import RenderConfig, calibrate_exposure, render
from .rng import Rng
from .scene import (EnvironmentState, EyeglassesConfig, HeadConfig, Scene,
                    build_pose, sample_env_intensity_bin)

HEAD_POOL = 24
TRAIN_HEADS = tuple(range(18))
TEST_HEADS = tuple(range(18, 24))

# stream tags for plan-time draws
_T_CLOSURE, _T_GLASSES, _T_ASPHER, _T_IMAGE = 1, 2, 3, 4


def round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecipe:
    name: str = "s-general"                # s-nvgaze | s-openeds | s-general | custom
    total_images: int = 396
    width: int = 640
    height: int = 480
    pose_sampler: str = "s-general"
    open_count: int = 360
    partial_count: int = 18                # closure in [0.8, 1.0)
    closed_count: int = 18                 # closure = 1
    glasses_fraction: float = 0.5
    gaze_range: float = 30.0               # +- degrees, azimuth and elevation
    pupil_range: tuple[float, float] = (1.0, 4.0)
    asphericities: tuple[float, ...] = ASPHERICITY_CHOICES
    head_pool: str = "train"               # train | test
    master_seed: int = 0
    samples_per_pixel: int = 32            # desk-scale default; full scale uses 200
    max_bounces: int = 6
    channels: int = 1

    def validate(self) -> None:
        if self.open_count + self.partial_count + self.closed_count \
                != self.total_images:
            raise RecipeError("composition counts must sum to total_images")
        if not 0.0 <= self.glasses_fraction <= 1.0:
            raise RecipeError("glasses fraction out of [0, 1]")
        if not self.pupil_range[0] < self.pupil_range[1]:
            raise RecipeError("empty pupil radius range")
        if self.gaze_range < 0 or not self.asphericities:
            raise RecipeError("invalid gaze range or asphericity set")
        if self.pose_sampler not in ("s-nvgaze", "s-openeds", "s-general"):
            raise RecipeError(f"unknown pose sampler {self.pose_sampler!r}")
        if self.head_pool not in ("train", "test"):
            raise RecipeError("head_pool must be 'train' or 'test'")
        if min(self.total_images, self.open_count, self.partial_count,
               self.closed_count) < 0:
            raise RecipeError("negative counts")

    def to_dict(self) -> dict:
        d = {"schema_version": "1.0"}
        d.update(asdict(self))
        return d

    @staticmethod
    def from_dict(d: dict) -> "DatasetRecipe":
        from .io import check_schema_version
        check_schema_version(d)
        fields = {k: v for k, v in d.items() if k != "schema_version"}
        for key in ("pupil_range", "asphericities"):
            if key in fields:
                fields[key] = tuple(fields[key])
        try:
            return DatasetRecipe(**fields)
        except TypeError as exc:
            raise RecipeError(f"bad recipe field: {exc}") from None


def standard_recipe(name: str, desk_scale: bool = True, seed: int = 0) -> DatasetRecipe:
    """The three standard dataset configurations; desk scale divides the
    training counts by 100 (396 images), full scale keeps 39,600."""
    total, opn, part, closed = (396, 360, 18, 18) if desk_scale \
        else (39_600, 36_000, 1_800, 1_800)
    spp = 32 if desk_scale else 200
    if name == "s-openeds":
        return DatasetRecipe(name=name, total_images=total, width=400,
                             height=640, pose_sampler="s-openeds",
                             open_count=opn, partial_count=part,
                             closed_count=closed, master_seed=seed,
                             samples_per_pixel=spp)
    if name in ("s-nvgaze", "s-general"):
        return DatasetRecipe(name=name, total_images=total, width=640,
                             height=480, pose_sampler=name, open_count=opn,
                             partial_count=part, closed_count=closed,
                             master_seed=seed, samples_per_pixel=spp)
    raise RecipeError(f"unknown standard recipe {name!r}")


@dataclass(frozen=True)
class SampledImageSpec:
    """Fully-resolved parameters for one image."""

    image_id: int
    seed: int
    head_id: int
    closure_kind: str          # open | partial | closed
    eyelid_closure: float
    glasses: bool
    cornea_asphericity: float
    pupil_radius: float
    gaze_azimuth: float
    gaze_elevation: float
    iris_texture_id: str
    iris_rotation: float
    sclera_rotation: float
    pose_sampler: str
    distance: float
    offset_x: float
    offset_y: float
    cam_azimuth: float
    cam_elevation: float
    env_id: str
    env_rotation: tuple[float, float, float]
    env_scale: float

    def to_dict(self) -> dict:
        return asdict(self)


def _quota_list(rng: Rng, pairs: list[tuple[object, int]]) -> list:
    out = []
    for value, count in pairs:
        out.extend([value] * count)
    rng.shuffle(out)
    return out


def _near_equal_counts(total: int, k: int) -> list[int]:
    base = total // k
    return [base + (1 if i < total % k else 0) for i in range(k)]


def plan_dataset(recipe: DatasetRecipe, pack: AssetPack | None = None
                 ) -> list[SampledImageSpec]:
    recipe.validate()
    root = Rng(recipe.master_seed)
    n = recipe.total_images

    closure_kinds = _quota_list(root.fork(_T_CLOSURE),
                                [("open", recipe.open_count),
                                 ("partial", recipe.partial_count),
                                 ("closed", recipe.closed_count)])
    n_glasses = round_half_away(recipe.glasses_fraction * n)
    glasses_flags = _quota_list(root.fork(_T_GLASSES),
                                [(True, n_glasses), (False, n - n_glasses)])
    aspher_counts = _near_equal_counts(n, len(recipe.asphericities))
    aspher_list = _quota_list(root.fork(_T_ASPHER),
                              list(zip(recipe.asphericities, aspher_counts)))

    heads = TRAIN_HEADS if recipe.head_pool == "train" else TEST_HEADS
    iris_ids = pack.iris_ids() if pack is not None else None
    if iris_ids is None:
        from .assets import IRIS_TEXTURE_IDS
        iris_ids = list(IRIS_TEXTURE_IDS)
    environment_ids = (pack.environment_ids() if pack is not None
                       else env_ids())

    specs = []
    for i in range(n):
        r = root.fork(_T_IMAGE, i)
        gaze_az = r.uniform(-recipe.gaze_range, recipe.gaze_range)
        gaze_el = r.uniform(-recipe.gaze_range, recipe.gaze_range)
        kind = closure_kinds[i]
        if kind == "open":
            closure = eyelid_closure_for_gaze(gaze_el)
        elif kind == "partial":
            closure = r.uniform(0.8, 1.0 - 1e-9)
        else:
            closure = 1.0
        pupil = r.uniform(*recipe.pupil_range)
        iris_tex = iris_ids[r.randint(len(iris_ids))]
        iris_rot = r.uniform(0.0, 360.0 - 1e-12)
        sclera_rot = r.uniform(0.0, 360.0 - 1e-12)
        head = heads[r.randint(len(heads))]

        dist_lo, dist_hi = (25.0, 45.0) if recipe.pose_sampler == "s-general" \
            else (35.0, 45.0)
        distance = r.uniform(dist_lo, dist_hi)
        if recipe.pose_sampler == "s-general":
            cam_az = r.uniform(-20.0, 60.0)
            cam_el = r.uniform(-20.0, 40.0)
            off = 1.0
        else:
            cam_az, cam_el = 0.0, (-10.0 if recipe.pose_sampler == "s-openeds"
                                   else 0.0)
            off = 5.0
        ox = r.uniform(-off, off)
        oy = r.uniform(-off, off)

        env_id = environment_ids[r.randint(len(environment_ids))]
        env_rot = (r.uniform(0.0, 360.0 - 1e-12), r.uniform(-60.0, 60.0),
                   r.uniform(-60.0, 60.0))
        env_scale = sample_env_intensity_bin(r)

        specs.append(SampledImageSpec(
            image_id=i,
            seed=recipe.master_seed,
            head_id=head,
            closure_kind=kind,
            eyelid_closure=closure,
            glasses=glasses_flags[i],
            cornea_asphericity=aspher_list[i],
            pupil_radius=pupil,
            gaze_azimuth=gaze_az,
            gaze_elevation=gaze_el,
            iris_texture_id=iris_tex,
            iris_rotation=iris_rot,
            sclera_rotation=sclera_rot,
            pose_sampler=recipe.pose_sampler,
            distance=distance,
            offset_x=ox,
            offset_y=oy,
            cam_azimuth=cam_az,
            cam_elevation=cam_el,
            env_id=env_id,
            env_rotation=env_rot,
            env_scale=env_scale,
        ))
    return specs


def head_config_for(head_id: int) -> HeadConfig:
    """Per-identity skin/lid variation, deterministic in the head id."""
    r = Rng(900_000 + head_id)
    albedo = 0.5 + 0.25 * r.next()
    tint = 0.75 + 0.2 * r.next()
    return HeadConfig(
        head_id=head_id,
        aperture_half_width=10.0 + 2.0 * r.next(),
        upper_open=5.0 + 1.0 * r.next(),
        lower_open=4.0 + 1.0 * r.next(),
        meet_line=-1.5 + 1.0 * r.next(),
        skin_albedo=albedo,
        skin_rgb=(albedo, albedo * tint, albedo * tint * 0.85),
        caruncle_radius=1.5 + 0.5 * r.next(),
    )


def scene_for_spec(spec: SampledImageSpec, recipe: DatasetRecipe,
                   pack: AssetPack) -> tuple[Scene, RenderConfig]:
    eye = build_eye(EyeParams(
        cornea_asphericity=spec.cornea_asphericity,
        pupil_radius=spec.pupil_radius,
        eyelid_closure=spec.eyelid_closure,
        iris_texture_id=spec.iris_texture_id,
        iris_rotation=spec.iris_rotation,
        sclera_rotation=spec.sclera_rotation,
        gaze_azimuth=spec.gaze_azimuth,
        gaze_elevation=spec.gaze_elevation,
    ))
    pose = build_pose(spec.pose_sampler, recipe.width, recipe.height,
                      spec.distance, spec.offset_x, spec.offset_y,
                      spec.cam_azimuth, spec.cam_elevation)
    env = EnvironmentState(spec.env_id, pack.environment(spec.env_id),
                           rotation_y=spec.env_rotation[0],
                           rotation_x=spec.env_rotation[1],
                           rotation_z=spec.env_rotation[2],
                           intensity_scale=spec.env_scale)
    scene = Scene(eye, pose.camera, pose.emitters,
                  pack.textures(spec.iris_texture_id), env=env,
                  glasses=EyeglassesConfig(present=spec.glasses),
                  head=head_config_for(spec.head_id))
    cfg = RenderConfig(width=recipe.width, height=recipe.height,
                       samples_per_pixel=recipe.samples_per_pixel,
                       max_bounces=recipe.max_bounces,
                       channels=recipe.channels, seed=recipe.master_seed,
                       image_id=spec.image_id)
    return scene, cfg


_GEN_STATE: dict = {}


def _gen_init(recipe, pack, exposure):
    _GEN_STATE.update(recipe=recipe, pack=pack, exposure=exposure)


def _gen_one(spec):
    from dataclasses import replace as dc_replace
    try:
        scene, cfg = scene_for_spec(spec, _GEN_STATE["recipe"],
                                    _GEN_STATE["pack"])
        cfg = dc_replace(cfg, exposure=_GEN_STATE["exposure"])
        result = render(scene, cfg, workers=1, head_id=spec.head_id)
        return spec.image_id, result, None
    except Exception as exc:  # noqa: BLE001 - reported by the collector
        return spec.image_id, None, f"{type(exc).__name__}: {exc}"


def generate_dataset(recipe: DatasetRecipe, output_dir, pack: AssetPack | None = None,
                     workers: int = 1) -> dict:
    """Render every planned image; returns the written manifest dict.

    Rendering is parallel across images (one render per worker); a single
    collector in this process writes all files in image order.
    """
    from . import io as eio
    out = Path(output_dir)
    pack = pack if pack is not None else AssetPack()
    specs = plan_dataset(recipe, pack)

    exposure = None
    if specs:
        scene0, cfg0 = scene_for_spec(specs[0], recipe, pack)
        exposure = calibrate_exposure(scene0, cfg0)

    entries = []
    jsonl_lines = []
    failed = []

    if workers > 1 and len(specs) > 1:
        from multiprocessing import get_context
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=_gen_init,
                      initargs=(recipe, pack, exposure)) as pool:
            results = pool.imap(_gen_one, specs)
            results = list(results)
    else:
        _gen_init(recipe, pack, exposure)
        results = [_gen_one(spec) for spec in specs]

    for spec, (image_id, result, error) in zip(specs, results):
        sid = f"{image_id:06d}"
        if error is not None:
            failed.append(sid)
            entries.append({"id": sid, "status": "failed", "error": error})
            continue
        paths = {
            "image": f"images/{sid}.png",
            "mask": f"masks/{sid}.png",
            "mask_noskin": f"masks_noskin/{sid}.png",
            "meta": f"meta/{sid}.json",
        }
        eio.write_png(out / paths["image"], result.image)
        eio.write_mask_png(out / paths["mask"], result.mask_with_skin)
        eio.write_mask_png(out / paths["mask_noskin"],
                           result.mask_without_skin)
        meta_dict = result.metadata.to_dict()
        meta_dict["spec"] = spec.to_dict()
        eio.write_json(out / paths["meta"], meta_dict)
        digests = {k: eio.file_digest(out / rel) for k, rel in paths.items()}
        entries.append({"id": sid, "status": "ok", **paths,
                        "digests": digests})
        jsonl_lines.append(eio.read_json(out / paths["meta"]))

    manifest = eio.build_manifest(recipe.to_dict(), entries,
                                  recipe.master_seed)
    manifest["exposure"] = exposure
    manifest["failed"] = failed
    eio.write_json(out / "manifest.json", manifest)
    import json
    with open(out / "metadata.jsonl", "w") as fh:
        for line in jsonl_lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    return manifest


def stratified_split(metadata: list, train_fraction: float = 0.8,
                     bin_grid: tuple[int, int] = (8, 8), seed: int = 0
                     ) -> tuple[list, list]:
    """80/20 split stratified over binned 2-D pupil centre locations.

    Within each nonempty bin, round_half_away(train_fraction * n) records
    go to train (a single-record bin therefore lands in train); assignment
    within a bin is a seeded shuffle.
    """
    if not metadata:
        raise ValueError("empty metadata list")
    gx, gy = bin_grid
    bins: dict[tuple[int, int], list] = {}
    for rec in metadata:
        d = rec.to_dict() if hasattr(rec, "to_dict") else rec
        px, py = d["pupil_center_2d"]
        w, h = d["resolution"]
        bx = min(int(px / w * gx), gx - 1) if math.isfinite(px) else 0
        by = min(int(py / h * gy), gy - 1) if math.isfinite(py) else 0
        bins.setdefault((bx, by), []).append(d["image_id"])
    train, val = [], []
    rng = Rng(seed, (8, 0, 2, 0))
    for key in sorted(bins):
        ids = sorted(bins[key])
        rng.fork(41, key[0], key[1], 0).shuffle(ids)
        n_train = round_half_away(train_fraction * len(ids))
        train.extend(ids[:n_train])
        val.extend(ids[n_train:])
    return sorted(train), sorted(val)

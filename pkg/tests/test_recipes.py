import collections

import numpy as np
import pytest

from eyesynth.assets import IRIS_TEXTURE_IDS, env_ids
from eyesynth.eye import ASPHERICITY_CHOICES, eyelid_closure_for_gaze
from eyesynth.recipes import (TEST_HEADS, TRAIN_HEADS, DatasetRecipe,
                              RecipeError, generate_dataset, standard_recipe,
                              plan_dataset, round_half_away,
                              stratified_split)


def _small_recipe(**kw):
    base = dict(name="custom", total_images=60, width=40, height=40,
                pose_sampler="s-general", open_count=50, partial_count=6,
                closed_count=4, master_seed=3, samples_per_pixel=2)
    base.update(kw)
    return DatasetRecipe(**base)


# ------------------------------------------------------------------- plan

def test_desk_scale_plan_quotas():
    recipe = standard_recipe("s-nvgaze", desk_scale=True, seed=11)
    specs = plan_dataset(recipe)
    assert len(specs) == 396
    kinds = collections.Counter(s.closure_kind for s in specs)
    assert kinds == {"open": 360, "partial": 18, "closed": 18}
    assert sum(s.glasses for s in specs) == 198
    aspher = collections.Counter(s.cornea_asphericity for s in specs)
    assert aspher == {q: 132 for q in ASPHERICITY_CHOICES}


def test_all_open_composition_uses_gaze_rule():
    recipe = _small_recipe(total_images=3, open_count=3, partial_count=0,
                           closed_count=0)
    specs = plan_dataset(recipe)
    assert len(specs) == 3
    for s in specs:
        assert s.closure_kind == "open"
        assert s.eyelid_closure == pytest.approx(
            eyelid_closure_for_gaze(s.gaze_elevation))


def test_plan_deterministic_and_seed_sensitive():
    recipe = _small_recipe()
    a = plan_dataset(recipe)
    b = plan_dataset(recipe)
    assert a == b
    c = plan_dataset(_small_recipe(master_seed=4))
    assert a != c
    # identical quotas regardless of seed
    for plan in (a, c):
        kinds = collections.Counter(s.closure_kind for s in plan)
        assert kinds == {"open": 50, "partial": 6, "closed": 4}
        assert sum(s.glasses for s in plan) == 30


def test_support_property_every_field_in_range():
    recipe = _small_recipe(total_images=2000, open_count=1900,
                           partial_count=60, closed_count=40)
    specs = plan_dataset(recipe)
    env_pool = set(env_ids())
    for s in specs:
        assert -30.0 <= s.gaze_azimuth <= 30.0
        assert -30.0 <= s.gaze_elevation <= 30.0
        assert 1.0 <= s.pupil_radius <= 4.0
        assert 0.0 <= s.eyelid_closure <= 1.0
        if s.closure_kind == "partial":
            assert 0.8 <= s.eyelid_closure < 1.0
        if s.closure_kind == "closed":
            assert s.eyelid_closure == 1.0
        assert s.cornea_asphericity in ASPHERICITY_CHOICES
        assert s.iris_texture_id in IRIS_TEXTURE_IDS
        assert 0.0 <= s.iris_rotation < 360.0
        assert 0.0 <= s.sclera_rotation < 360.0
        assert s.head_id in TRAIN_HEADS
        assert 25.0 <= s.distance <= 45.0
        assert -20.0 <= s.cam_azimuth <= 60.0
        assert -20.0 <= s.cam_elevation <= 40.0
        assert -1.0 <= s.offset_x <= 1.0 and -1.0 <= s.offset_y <= 1.0
        assert s.env_id in env_pool
        assert 0.0 <= s.env_rotation[0] < 360.0
        assert -60.0 <= s.env_rotation[1] <= 60.0
        assert -60.0 <= s.env_rotation[2] <= 60.0
        assert 0.5 <= s.env_scale <= 1.5


def test_head_pools_never_mix():
    train_specs = plan_dataset(_small_recipe())
    test_specs = plan_dataset(_small_recipe(head_pool="test"))
    train_ids = {s.head_id for s in train_specs}
    test_ids = {s.head_id for s in test_specs}
    assert train_ids <= set(TRAIN_HEADS)
    assert test_ids <= set(TEST_HEADS)
    assert not (train_ids & test_ids)


def test_recipe_validation():
    with pytest.raises(RecipeError):
        plan_dataset(_small_recipe(open_count=10))   # counts don't sum
    with pytest.raises(RecipeError):
        plan_dataset(_small_recipe(glasses_fraction=1.5))
    with pytest.raises(RecipeError):
        plan_dataset(_small_recipe(pose_sampler="bogus"))
    with pytest.raises(RecipeError):
        plan_dataset(_small_recipe(pupil_range=(4.0, 1.0)))


def test_standard_recipe_resolutions():
    assert (standard_recipe("s-openeds").width,
            standard_recipe("s-openeds").height) == (400, 640)
    assert (standard_recipe("s-nvgaze").width,
            standard_recipe("s-nvgaze").height) == (640, 480)
    assert (standard_recipe("s-general").width,
            standard_recipe("s-general").height) == (640, 480)
    full = standard_recipe("s-general", desk_scale=False)
    assert full.total_images == 39_600
    assert full.open_count == 36_000
    assert full.samples_per_pixel == 200


def test_recipe_dict_roundtrip():
    recipe = standard_recipe("s-openeds", seed=9)
    again = DatasetRecipe.from_dict(recipe.to_dict())
    assert again == recipe


def test_recipe_from_minimal_dict_uses_defaults():
    recipe = DatasetRecipe.from_dict({
        "schema_version": "1.0", "name": "custom", "total_images": 2,
        "open_count": 2, "partial_count": 0, "closed_count": 0,
        "pose_sampler": "s-general", "master_seed": 7})
    assert recipe.pupil_range == (1.0, 4.0)
    assert recipe.glasses_fraction == 0.5
    with pytest.raises(RecipeError):
        DatasetRecipe.from_dict({"schema_version": "1.0",
                                 "no_such_field": 1})


def test_round_half_away():
    assert round_half_away(8.5) == 9
    assert round_half_away(0.8) == 1
    assert round_half_away(2.4) == 2
    assert round_half_away(-2.5) == -3


# ------------------------------------------------------------------ split

def _meta(image_id, px, py, w=640, h=480):
    return {"image_id": image_id, "pupil_center_2d": (px, py),
            "resolution": (w, h)}


def test_split_single_bin_eight_two():
    records = [_meta(i, 320.0, 240.0) for i in range(10)]
    train, val = stratified_split(records)
    assert len(train) == 8 and len(val) == 2
    assert sorted(train + val) == list(range(10))


def test_split_single_record_bins_go_to_train():
    # round_half_away(0.8 * 1) = 1
    records = [_meta(0, 10.0, 10.0), _meta(1, 620.0, 470.0)]
    train, val = stratified_split(records)
    assert sorted(train) == [0, 1]
    assert val == []


def test_split_uniform_spread_fraction():
    rng = np.random.default_rng(0)
    records = []
    i = 0
    for bx in range(8):
        for by in range(8):
            for _ in range(100):
                px = (bx + rng.uniform(0.05, 0.95)) * 640 / 8
                py = (by + rng.uniform(0.05, 0.95)) * 480 / 8
                records.append(_meta(i, px, py))
                i += 1
    train, val = stratified_split(records, bin_grid=(8, 8))
    frac = len(train) / len(records)
    assert abs(frac - 0.8) <= 0.005
    assert sorted(train + val) == list(range(len(records)))
    assert not (set(train) & set(val))


def test_split_deterministic():
    records = [_meta(i, (i * 37) % 640, (i * 53) % 480) for i in range(200)]
    assert stratified_split(records, seed=5) == stratified_split(records, seed=5)
    assert stratified_split(records, seed=5) != stratified_split(records, seed=6)


def test_split_empty_rejected():
    with pytest.raises(ValueError):
        stratified_split([])


# -------------------------------------------------------------- generation

def test_generate_smoke_dataset(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    recipe = _small_recipe(total_images=4, open_count=3, partial_count=0,
                           closed_count=1, samples_per_pixel=2)
    out = tmp_path / "d1"
    manifest = generate_dataset(recipe, out)
    assert manifest["failed"] == []
    assert len(list((out / "images").glob("*.png"))) == 4
    assert len(list((out / "masks").glob("*.png"))) == 4
    assert len(list((out / "masks_noskin").glob("*.png"))) == 4
    assert len(list((out / "meta").glob("*.json"))) == 4
    assert (out / "manifest.json").exists()
    assert (out / "metadata.jsonl").exists()

    from eyesynth.io import read_json, verify_manifest
    m = read_json(out / "manifest.json")
    assert verify_manifest(m, out) == []

    # regeneration with the same seed is byte-identical, and worker count
    # does not matter (image-level parallelism, deterministic per-image rng)
    out2 = tmp_path / "d2"
    generate_dataset(recipe, out2, workers=2)
    for rel in sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file()):
        assert (out / rel).read_bytes() == (out2 / rel).read_bytes(), rel

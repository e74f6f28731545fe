"""Procedural asset pack: iris/sclera textures and HDR environments.

Real captures cannot be shipped, so the pack synthesizes deterministic
stand-ins with the same catalogue shape: 9 iris textures, 1 sclera
texture, 25 environment maps tagged indoor (9) / outdoor (16).  Assets are
addressed through a manifest file so user-supplied packs with the same
layout drop in unchanged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Rng
from .scene import AssetError, SceneTextures

IRIS_TEXTURE_IDS = tuple(f"iris{k:02d}" for k in range(9))
SCLERA_TEXTURE_ID = "sclera00"
ENV_INDOOR_COUNT = 9
ENV_OUTDOOR_COUNT = 16
MANIFEST_NAME = "assets.json"

_IRIS_BASE_RGB = [
    (0.35, 0.22, 0.12), (0.18, 0.30, 0.40), (0.42, 0.30, 0.15),
    (0.25, 0.25, 0.28), (0.30, 0.38, 0.25), (0.45, 0.35, 0.22),
    (0.20, 0.24, 0.35), (0.38, 0.26, 0.20), (0.28, 0.33, 0.33),
]


def make_iris_texture(texture_id: str, height: int = 64,
                      width: int = 256) -> np.ndarray:
    """Polar iris map (rows pupil->limbus, cols angle), RGB in [0, 1]."""
    try:
        idx = IRIS_TEXTURE_IDS.index(texture_id)
    except ValueError:
        raise AssetError(f"unknown iris texture id {texture_id!r}") from None
    rng = Rng(1000 + idx)
    u = np.linspace(0.0, 1.0, height)[:, None]          # radial
    v = np.linspace(0.0, 1.0, width, endpoint=False)[None, :]
    fibers = np.zeros((height, width))
    for _ in range(24):
        k = 2 + rng.randint(30)
        phase = rng.uniform(0, 2 * math.pi)
        amp = 0.03 + 0.07 * rng.next()
        wobble = 1.5 * rng.next()
        fibers += amp * np.sin(2 * math.pi * k * v + phase + wobble * u)
    collarette = 0.12 * np.exp(-((u - 0.35) / 0.08) ** 2)
    radial = 0.75 + 0.5 * u - 0.35 * u * u
    crypt = 0.05 * np.sin(2 * math.pi * 3 * u + 4 * np.sin(2 * math.pi * 2 * v))
    lum = np.clip(radial + fibers + collarette + crypt, 0.05, 1.6)
    base = np.array(_IRIS_BASE_RGB[idx])
    tex = np.clip(lum[:, :, None] * base[None, None, :], 0.0, 1.0)
    # dark limbal ring
    tex *= (1.0 - 0.6 * np.clip((u - 0.88) / 0.12, 0, 1))[:, :, None]
    return tex


def make_sclera_texture(height: int = 96, width: int = 256) -> np.ndarray:
    """Near-white sclera with faint vascular streaks, RGB in [0, 1]."""
    rng = Rng(777)
    lat = np.linspace(0.0, 1.0, height)[:, None]
    lon = np.linspace(0.0, 1.0, width, endpoint=False)[None, :]
    veins = np.zeros((height, width))
    for _ in range(14):
        y0 = rng.next()
        freq = 3 + rng.randint(6)
        amp = 0.02 + 0.02 * rng.next()
        track = y0 + 0.08 * np.sin(2 * math.pi * freq * lon + rng.uniform(0, 6.28))
        veins += amp * np.exp(-((lat - track) / 0.012) ** 2)
    white = 0.92 - 0.05 * np.abs(lat - 0.5) * 2.0
    r = np.clip(white + 0.35 * veins, 0, 1)
    g = np.clip(white - 0.45 * veins, 0, 1)
    b = np.clip(white - 0.5 * veins, 0, 1)
    return np.stack([r, g, b], axis=2)


def make_environment_map(index: int, height: int = 64,
                         width: int = 128) -> tuple[np.ndarray, str]:
    """Synthetic HDR panorama; returns (image, 'indoor'|'outdoor')."""
    indoor = index < ENV_INDOOR_COUNT
    rng = Rng(5000 + index)
    v, u = np.meshgrid(np.linspace(0.0, 1.0, height),                 # 0 = up
                       np.linspace(0.0, 1.0, width, endpoint=False),
                       indexing="ij")
    if indoor:
        base = 0.08 + 0.1 * v                     # dim room, brighter floor
        img = np.stack([base * 1.0, base * 0.95, base * 0.85], axis=2)
        for _ in range(2 + rng.randint(3)):       # windows / luminaires
            cu, cv = rng.next(), 0.15 + 0.5 * rng.next()
            wu, wv = 0.04 + 0.1 * rng.next(), 0.08 + 0.12 * rng.next()
            power = 2.0 + 6.0 * rng.next()
            du = np.minimum(np.abs(u - cu), 1.0 - np.abs(u - cu)) / wu
            dv = np.abs(v - cv) / wv
            blob = np.exp(-(du ** 4 + dv ** 4))
            tint = np.array([1.0, 0.9 + 0.1 * rng.next(), 0.7 + 0.3 * rng.next()])
            img += power * blob[:, :, None] * tint[None, None, :]
    else:
        sky_top = np.array([0.25, 0.45, 0.95])
        sky_hor = np.array([0.9, 0.95, 1.1])
        ground = np.array([0.25, 0.22, 0.18])
        t = np.clip(v * 2.0, 0, 1)
        sky = sky_top[None, None, :] * (1 - t[:, :, None]) \
            + sky_hor[None, None, :] * t[:, :, None]
        img = np.where((v < 0.5)[:, :, None], sky,
                       ground[None, None, :] * (1.4 - v[:, :, None]))
        su, sv = rng.next(), 0.1 + 0.25 * rng.next()
        du = np.minimum(np.abs(u - su), 1.0 - np.abs(u - su))
        d2 = (du / 0.06) ** 2 + ((v - sv) / 0.06) ** 2
        sun = (8.0 + 16.0 * rng.next()) * np.exp(-d2)
        img = img + sun[:, :, None] * np.array([1.0, 0.95, 0.85])[None, None, :]
    return np.maximum(img, 0.0), ("indoor" if indoor else "outdoor")


def env_ids() -> list[str]:
    return [f"env{k:02d}" for k in range(ENV_INDOOR_COUNT + ENV_OUTDOOR_COUNT)]


def default_textures(iris_texture_id: str = "iris00") -> SceneTextures:
    return SceneTextures(iris=make_iris_texture(iris_texture_id),
                         sclera=make_sclera_texture())


@dataclass
class AssetPack:
    """Resolves texture/environment ids, from disk or procedurally."""

    root: Path | None = None
    _manifest: dict | None = None
    _cache: dict | None = None

    def __post_init__(self):
        self._cache = {}
        if self.root is not None:
            self.root = Path(self.root)
            mpath = self.root / MANIFEST_NAME
            if not mpath.exists():
                raise AssetError(f"asset manifest not found: {mpath}")
            self._manifest = json.loads(mpath.read_text())

    def environment_ids(self, tag: str | None = None) -> list[str]:
        if self._manifest is None:
            ids = env_ids()
            if tag is None:
                return ids
            limit = ENV_INDOOR_COUNT if tag == "indoor" else None
            return ids[:ENV_INDOOR_COUNT] if tag == "indoor" else ids[ENV_INDOOR_COUNT:]
        entries = self._manifest["environments"]
        return [e["id"] for e in entries if tag is None or e["tag"] == tag]

    def iris_ids(self) -> list[str]:
        if self._manifest is None:
            return list(IRIS_TEXTURE_IDS)
        return [e["id"] for e in self._manifest["iris_textures"]]

    def textures(self, iris_texture_id: str) -> SceneTextures:
        key = ("tex", iris_texture_id)
        if key not in self._cache:
            if self._manifest is None:
                self._cache[key] = default_textures(iris_texture_id)
            else:
                iris = self._load_texture("iris_textures", iris_texture_id)
                sclera = self._load_texture("sclera_textures",
                                            self._manifest["sclera_textures"][0]["id"])
                self._cache[key] = SceneTextures(iris=iris, sclera=sclera)
        return self._cache[key]

    def _load_texture(self, section: str, tex_id: str) -> np.ndarray:
        from .io import read_png
        entry = next((e for e in self._manifest[section] if e["id"] == tex_id), None)
        if entry is None:
            raise AssetError(f"texture id {tex_id!r} not in manifest")
        arr, kind = read_png(self.root / entry["path"])
        if kind == "gray":
            arr = np.stack([arr] * 3, axis=2)
        elif kind == "palette":
            raise AssetError(f"palette PNG is not a texture: {entry['path']}")
        return arr.astype(np.float64) / 255.0

    def environment(self, env_id: str) -> np.ndarray:
        key = ("env", env_id)
        if key not in self._cache:
            if self._manifest is None:
                ids = env_ids()
                if env_id not in ids:
                    raise AssetError(f"unknown environment id {env_id!r}")
                self._cache[key] = make_environment_map(ids.index(env_id))[0]
            else:
                from .io import read_hdr
                entry = next((e for e in self._manifest["environments"]
                              if e["id"] == env_id), None)
                if entry is None:
                    raise AssetError(f"environment id {env_id!r} not in manifest")
                self._cache[key] = read_hdr(self.root / entry["path"])
        return self._cache[key]


def write_asset_pack(root: Path) -> Path:
    """Generate the full procedural pack on disk plus its manifest."""
    from .io import write_hdr, write_png
    root = Path(root)
    (root / "textures").mkdir(parents=True, exist_ok=True)
    (root / "env").mkdir(parents=True, exist_ok=True)
    manifest = {"schema_version": "1.0", "iris_textures": [],
                "sclera_textures": [], "environments": []}
    for tid in IRIS_TEXTURE_IDS:
        path = f"textures/{tid}.png"
        tex = (make_iris_texture(tid) * 255.0).round().astype(np.uint8)
        write_png(root / path, tex)
        manifest["iris_textures"].append({"id": tid, "path": path})
    spath = f"textures/{SCLERA_TEXTURE_ID}.png"
    write_png(root / spath,
              (make_sclera_texture() * 255.0).round().astype(np.uint8))
    manifest["sclera_textures"].append({"id": SCLERA_TEXTURE_ID, "path": spath})
    for k, env_id in enumerate(env_ids()):
        img, tag = make_environment_map(k)
        path = f"env/{env_id}.hdr"
        write_hdr(root / path, img)
        manifest["environments"].append({"id": env_id, "path": path, "tag": tag})
    mpath = root / MANIFEST_NAME
    mpath.write_text(json.dumps(manifest, indent=2) + "\n")
    return mpath

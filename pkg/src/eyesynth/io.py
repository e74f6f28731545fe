"""Persistence: PNG images, paletted class masks, Radiance RGBE maps,
dataset manifests and metadata records.

Angles are stored in degrees, lengths in millimetres, pixel coordinates
with the origin at the top-left corner.  Metadata and manifests carry a
`schema_version`; readers reject unknown major versions.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

import numpy as np
from PIL import Image

from .eye import CLASS_PALETTE

SCHEMA_VERSION = "1.0"


class UnsupportedDepthError(ValueError):
    """PNG bit depth other than 8 is rejected rather than truncated."""


class CorruptFileError(ValueError):
    pass


# ------------------------------------------------------------------- png

def write_png(path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError("write_png expects uint8 data")
    if arr.ndim == 2:
        img = Image.fromarray(arr, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        img = Image.fromarray(arr, mode="RGB")
    else:
        raise ValueError("expected (H, W) gray or (H, W, 3) RGB")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def read_png(path) -> tuple[np.ndarray, str]:
    """Returns (array, kind) with kind in {'gray', 'rgb', 'palette'}."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CorruptFileError(f"cannot decode PNG {path}: {exc}") from exc
    if img.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise UnsupportedDepthError(
            f"{path}: only 8-bit PNG is supported (got mode {img.mode})")
    if img.mode == "P":
        return np.asarray(img, dtype=np.uint8), "palette"
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8), "gray"
    if img.mode in ("RGB", "RGBA"):
        if img.mode == "RGBA":
            img = img.convert("RGB")
        return np.asarray(img, dtype=np.uint8), "rgb"
    raise UnsupportedDepthError(f"{path}: unsupported PNG mode {img.mode}")


_PALETTE_FLAT = []
for _cls in sorted(CLASS_PALETTE):
    _PALETTE_FLAT.extend(CLASS_PALETTE[_cls])

_COLOR_TO_CLASS = {tuple(CLASS_PALETTE[c]): int(c) for c in CLASS_PALETTE}


def write_mask_png(path, mask: np.ndarray) -> None:
    """Class-index mask as a paletted PNG with the fixed visualization palette."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    if m.max(initial=0) > 3:
        raise ValueError("mask codes must be in 0..3")
    img = Image.fromarray(m.astype(np.uint8), mode="P")
    img.putpalette(_PALETTE_FLAT + [0] * (768 - len(_PALETTE_FLAT)))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    """Class-index mask from a paletted, gray-index, or palette-colored PNG."""
    arr, kind = read_png(path)
    if kind in ("palette", "gray"):
        if arr.max(initial=0) > 3:
            raise CorruptFileError(f"{path}: mask codes exceed 3")
        return arr.astype(np.uint8)
    flat = arr.reshape(-1, 3)
    codes = np.full(len(flat), 255, dtype=np.uint8)
    for color, cls in _COLOR_TO_CLASS.items():
        codes[np.all(flat == np.array(color, dtype=np.uint8), axis=1)] = cls
    if np.any(codes == 255):
        raise CorruptFileError(f"{path}: pixel color outside the mask palette")
    return codes.reshape(arr.shape[:2])


def mask_to_rgb(mask: np.ndarray) -> np.ndarray:
    out = np.zeros((*mask.shape, 3), dtype=np.uint8)
    for cls, color in CLASS_PALETTE.items():
        out[mask == int(cls)] = color
    return out


# ------------------------------------------------------------------- rgbe

def write_hdr(path, image: np.ndarray) -> None:
    """Radiance RGBE, equirectangular, RLE scanlines."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or np.any(img < 0):
        raise ValueError("HDR image must be (H, W, 3) with non-negative values")
    h, w = img.shape[:2]
    rgbe = _float_to_rgbe(img)
    out = bytearray()
    out += b"#?RADIANCE\n"
    out += b"FORMAT=32-bit_rle_rgbe\n\n"
    out += f"-Y {h} +X {w}\n".encode()
    if 8 <= w < 32768:
        for row in rgbe:
            out += bytes((2, 2, (w >> 8) & 0xFF, w & 0xFF))
            for comp in range(4):
                out += _rle_encode(row[:, comp])
    else:
        out += rgbe.tobytes()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(bytes(out))


def read_hdr(path) -> np.ndarray:
    """Radiance RGBE decoder (flat and RLE scanlines) -> linear float RGB."""
    data = Path(path).read_bytes()
    pos = 0
    if not data.startswith(b"#?"):
        raise CorruptFileError(f"{path}: missing Radiance signature")
    # header: lines until the blank separator
    while True:
        eol = data.find(b"\n", pos)
        if eol < 0:
            raise CorruptFileError(f"{path}: truncated header")
        line = data[pos:eol]
        pos = eol + 1
        if line == b"":
            break
    eol = data.find(b"\n", pos)
    dims = data[pos:eol].split()
    if len(dims) != 4 or dims[0] != b"-Y" or dims[2] != b"+X":
        raise CorruptFileError(f"{path}: unsupported resolution line {dims!r}")
    h, w = int(dims[1]), int(dims[3])
    pos = eol + 1

    rgbe = np.zeros((h, w, 4), dtype=np.uint8)
    for y in range(h):
        if pos + 4 > len(data):
            raise CorruptFileError(f"{path}: truncated scanline {y}")
        head = data[pos:pos + 4]
        if head[0] == 2 and head[1] == 2 and ((head[2] << 8) | head[3]) == w:
            pos += 4
            for comp in range(4):
                pos = _rle_decode(data, pos, rgbe[y, :, comp], path)
        else:
            need = 4 * w
            if pos + need > len(data):
                raise CorruptFileError(f"{path}: truncated flat scanline {y}")
            rgbe[y] = np.frombuffer(data[pos:pos + need],
                                    dtype=np.uint8).reshape(w, 4)
            pos += need
    return _rgbe_to_float(rgbe)


def _float_to_rgbe(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    maxc = img.max(axis=2)
    out = np.zeros((h, w, 4), dtype=np.uint8)
    nz = maxc > 1e-32
    mant, expo = np.frexp(maxc[nz])
    scale = np.exp2(8.0 - expo)
    m = np.minimum(np.floor(img[nz] * scale[:, None] + 0.5), 255.0)
    out[nz, :3] = m.astype(np.uint8)
    out[nz, 3] = (expo + 128).astype(np.uint8)
    return out


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    e = rgbe[:, :, 3].astype(np.int32)
    scale = np.where(e == 0, 0.0, np.exp2(e - 136.0))  # value = m * 2^(E-136)
    return rgbe[:, :, :3].astype(np.float64) * scale[:, :, None]


def _rle_encode(comp: np.ndarray) -> bytes:
    out = bytearray()
    n = len(comp)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and comp[i + run] == comp[i]:
            run += 1
        if run >= 4:
            out += bytes((128 + run, int(comp[i])))
            i += run
        else:
            j = i
            while (j < n and j - i < 128
                   and not (j + 3 < n and comp[j] == comp[j + 1]
                            == comp[j + 2] == comp[j + 3])):
                j += 1
            out += bytes((j - i,)) + comp[i:j].tobytes()
            i = j
    return bytes(out)


def _rle_decode(data: bytes, pos: int, dest: np.ndarray, path) -> int:
    w = len(dest)
    x = 0
    while x < w:
        if pos >= len(data):
            raise CorruptFileError(f"{path}: truncated RLE scanline")
        code = data[pos]
        pos += 1
        if code > 128:
            count = code - 128
            if pos >= len(data) or x + count > w:
                raise CorruptFileError(f"{path}: bad RLE run")
            dest[x:x + count] = data[pos]
            pos += 1
        else:
            count = code
            if pos + count > len(data) or x + count > w:
                raise CorruptFileError(f"{path}: bad RLE literal")
            dest[x:x + count] = np.frombuffer(data[pos:pos + count],
                                              dtype=np.uint8)
            pos += count
        x += count
    return pos


# --------------------------------------------------------------- manifest

def file_digest(path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generation_timestamp() -> int:
    """Honors SOURCE_DATE_EPOCH so regeneration can be byte-identical."""
    sde = os.environ.get("SOURCE_DATE_EPOCH")
    return int(sde) if sde is not None else int(time.time())


def build_manifest(recipe_snapshot: dict, entries: list[dict],
                   master_seed: int) -> dict:
    ids = [e["id"] for e in entries]
    if len(ids) != len(set(ids)):
        raise ValueError("duplicate ids in manifest")
    return {
        "schema_version": SCHEMA_VERSION,
        "recipe": recipe_snapshot,
        "master_seed": master_seed,
        "generated_at": generation_timestamp(),
        "entries": entries,
    }


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def check_schema_version(obj: dict, path="<memory>") -> None:
    ver = str(obj.get("schema_version", ""))
    major = ver.split(".", 1)[0]
    ours = SCHEMA_VERSION.split(".", 1)[0]
    if major != ours:
        raise CorruptFileError(
            f"{path}: schema_version {ver!r} not supported (need major {ours})")


def verify_manifest(manifest: dict, root) -> list[str]:
    """Digest check for every listed file; returns the ids that fail."""
    bad = []
    root = Path(root)
    for entry in manifest["entries"]:
        for key in ("image", "mask", "mask_noskin", "meta"):
            rel = entry.get(key)
            if rel is None:
                continue
            p = root / rel
            if not p.exists() or file_digest(p) != entry["digests"][key]:
                bad.append(entry["id"])
                break
    return bad

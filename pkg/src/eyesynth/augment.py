"""Offline image/mask augmentation: seven schemes at equal probability.

All schemes leave the mask untouched except Flip, which mirrors image and
mask together (anything else would corrupt the labels).  Every output
pixel stays in [0, 255] and every transform is a pure function of
(scheme, rng stream).
"""

from __future__ import annotations

import json
import math
from enum import Enum
from pathlib import Path

import numpy as np

from .rng import Rng, hash_streams, uniform_from_state

# the thin-line centre box is defined in 400x640 (W x H) coordinates and
# scales proportionally at other resolutions
_LINE_BOX_REF_W = 400
_LINE_BOX_REF_H = 640
_LINE_BOX = (120, 280, 192, 448)  # x_lo, x_hi, y_lo, y_hi

LINE_COUNT_RANGE = (1, 3)
LINE_LENGTH_RANGE = (30.0, 100.0)
LINE_INTENSITY = 255

GAMMA_CHOICES = (0.6, 0.8, 1.2, 1.4)


class AugmentScheme(Enum):
    FLIP = "flip"
    GAUSSIAN_BLUR = "gaussian_blur"
    THIN_LINES = "thin_lines"
    GAMMA = "gamma"
    INTENSITY_OFFSET = "intensity_offset"
    DOWN_UP_NOISE = "down_up_noise"
    IDENTITY = "identity"


SCHEMES = tuple(AugmentScheme)


def select_scheme(rng: Rng) -> AugmentScheme:
    """Uniform over the seven schemes (1/7 each)."""
    return SCHEMES[rng.randint(len(SCHEMES))]


def sample_params(scheme: AugmentScheme, rng: Rng, shape) -> dict:
    h, w = shape[:2]
    if scheme == AugmentScheme.GAUSSIAN_BLUR:
        return {"sigma": rng.uniform(2.0, 7.0)}
    if scheme == AugmentScheme.THIN_LINES:
        x_lo = _LINE_BOX[0] * w / _LINE_BOX_REF_W
        x_hi = _LINE_BOX[1] * w / _LINE_BOX_REF_W
        y_lo = _LINE_BOX[2] * h / _LINE_BOX_REF_H
        y_hi = _LINE_BOX[3] * h / _LINE_BOX_REF_H
        cx = rng.uniform(x_lo, x_hi)
        cy = rng.uniform(y_lo, y_hi)
        lo, hi = LINE_COUNT_RANGE
        n_lines = lo + rng.randint(hi - lo + 1)
        lines = []
        for _ in range(n_lines):
            lines.append({"angle": rng.uniform(0.0, math.pi),
                          "length": rng.uniform(*LINE_LENGTH_RANGE)})
        return {"center": (cx, cy), "lines": lines}
    if scheme == AugmentScheme.GAMMA:
        return {"gamma": GAMMA_CHOICES[rng.randint(len(GAMMA_CHOICES))]}
    if scheme == AugmentScheme.INTENSITY_OFFSET:
        return {"offset": rng.randint(51) - 25}
    if scheme == AugmentScheme.DOWN_UP_NOISE:
        return {"factor": 2 + rng.randint(4),
                "sigma": rng.uniform(2.0, 16.0),
                "noise_key": int(rng.next() * (1 << 53))}
    return {}


def apply_params(scheme: AugmentScheme, image: np.ndarray, mask: np.ndarray,
                 params: dict) -> tuple[np.ndarray, np.ndarray]:
    if image.shape[:2] != mask.shape[:2]:
        raise ValueError("image and mask resolutions differ")
    img = image.copy()
    msk = mask.copy()
    if scheme == AugmentScheme.FLIP:
        return np.ascontiguousarray(img[:, ::-1]), \
            np.ascontiguousarray(msk[:, ::-1])
    if scheme == AugmentScheme.GAUSSIAN_BLUR:
        return _blur7(img, params["sigma"]), msk
    if scheme == AugmentScheme.THIN_LINES:
        return _draw_lines(img, params), msk
    if scheme == AugmentScheme.GAMMA:
        g = params["gamma"]
        lut = np.floor(255.0 * (np.arange(256) / 255.0) ** g + 0.5
                       ).astype(np.uint8)
        return lut[img], msk
    if scheme == AugmentScheme.INTENSITY_OFFSET:
        out = np.clip(img.astype(np.int16) + params["offset"], 0, 255)
        return out.astype(np.uint8), msk
    if scheme == AugmentScheme.DOWN_UP_NOISE:
        return _down_up_noise(img, params), msk
    return img, msk


def apply(scheme: AugmentScheme, image: np.ndarray, mask: np.ndarray,
          rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    return apply_params(scheme, image, mask,
                        sample_params(scheme, rng, image.shape))


def _blur7(img: np.ndarray, sigma: float) -> np.ndarray:
    x = np.arange(-3, 4, dtype=float)
    k = np.exp(-x * x / (2.0 * sigma * sigma))
    k /= k.sum()
    work = img.astype(np.float64)
    if work.ndim == 2:
        work = work[:, :, None]
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (3, 3)
        padded = np.pad(work, pad, mode="edge")
        acc = np.zeros_like(work)
        for i in range(7):
            sl = [slice(None)] * 3
            sl[axis] = slice(i, i + work.shape[axis])
            acc += k[i] * padded[tuple(sl)]
        work = acc
    out = np.floor(work + 0.5).astype(np.uint8)
    return out[:, :, 0] if img.ndim == 2 else out


def _draw_lines(img: np.ndarray, params: dict) -> np.ndarray:
    h, w = img.shape[:2]
    cx, cy = params["center"]
    for line in params["lines"]:
        a, length = line["angle"], line["length"]
        dx, dy = math.cos(a), math.sin(a)
        t = np.linspace(-length / 2.0, length / 2.0, int(2 * length) + 1)
        xs = np.clip(np.floor(cx + t * dx + 0.5), 0, w - 1).astype(int)
        ys = np.clip(np.floor(cy + t * dy + 0.5), 0, h - 1).astype(int)
        img[ys, xs] = LINE_INTENSITY
    return img


def _down_up_noise(img: np.ndarray, params: dict) -> np.ndarray:
    k = params["factor"]
    sigma = params["sigma"]
    h, w = img.shape[:2]
    mono = img.ndim == 2
    work = img[:, :, None] if mono else img
    ph = (k - h % k) % k
    pw = (k - w % k) % k
    padded = np.pad(work, ((0, ph), (0, pw), (0, 0)), mode="edge"
                    ).astype(np.float64)
    hh, ww = padded.shape[:2]
    small = padded.reshape(hh // k, k, ww // k, k, -1).mean(axis=(1, 3))
    # deterministic gaussian noise via Box-Muller on the counter rng
    n = small.size
    state = hash_streams(params["noise_key"], np.zeros(n, dtype=np.int64),
                         0, 0, 0)
    u1 = 1.0 - uniform_from_state(state, np.arange(n))
    u2 = uniform_from_state(state, np.arange(n, 2 * n))
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
    small = np.clip(small + sigma * z.reshape(small.shape), 0.0, 255.0)
    up = np.repeat(np.repeat(small, k, axis=0), k, axis=1)[:h, :w]
    out = np.floor(up + 0.5).astype(np.uint8)
    return out[:, :, 0] if mono else out


# ----------------------------------------------------------- dataset-level

def augment_dataset(input_dir, output_dir, seed: int = 0) -> list[dict]:
    """Dataset -> dataset transform; returns the provenance log."""
    from .io import (read_mask_png, read_png, write_json, write_mask_png,
                     write_png)
    src = Path(input_dir)
    dst = Path(output_dir)
    image_paths = sorted((src / "images").glob("*.png"))
    if not image_paths:
        raise FileNotFoundError(f"no images under {src / 'images'}")
    log = []
    for idx, img_path in enumerate(image_paths):
        stem = img_path.stem
        image, _ = read_png(img_path)
        mask = read_mask_png(src / "masks" / f"{stem}.png")
        mask_ns = read_mask_png(src / "masks_noskin" / f"{stem}.png")
        rng = Rng(seed, (7, idx, 0, 0))
        scheme = select_scheme(rng)
        params = sample_params(scheme, rng, image.shape)
        img_aug, mask_aug = apply_params(scheme, image, mask, params)
        _, mask_ns_aug = apply_params(scheme, image, mask_ns, params)
        write_png(dst / "images" / f"{stem}.png", img_aug)
        write_mask_png(dst / "masks" / f"{stem}.png", mask_aug)
        write_mask_png(dst / "masks_noskin" / f"{stem}.png", mask_ns_aug)
        meta_src = src / "meta" / f"{stem}.json"
        if meta_src.exists():
            (dst / "meta").mkdir(parents=True, exist_ok=True)
            (dst / "meta" / f"{stem}.json").write_bytes(meta_src.read_bytes())
        log.append({"id": stem, "scheme": scheme.value,
                    "params": _json_safe(params)})
    write_json(dst / "augment_log.json",
               {"schema_version": "1.0", "seed": seed, "entries": log})
    return log


def _json_safe(obj):
    return json.loads(json.dumps(obj, default=lambda o: list(o)
                                 if isinstance(o, tuple) else o))

"""Segmentation metrics: per-class IoU and dataset-level mIoU aggregation.

Masks are 2-D integer arrays with codes 0..3 (background/skin, sclera,
iris, pupil).  A class absent from both masks has undefined IoU and is
excluded from the mean by default (`undefined="exclude"`); the alternative
convention counts it as a perfect 1.0 (`undefined="one"`).  mIoU is
averaged per image first, then aggregated with mean and population
standard deviation across the dataset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 4
CLASS_NAMES = ("background", "sclera", "iris", "pupil")


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"resolution mismatch: {pred.shape} vs {gt.shape}")
    if pred.max(initial=0) >= N_CLASSES or gt.max(initial=0) >= N_CLASSES:
        raise ValueError("class codes must be in 0..3")


def confusion(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    _check_pair(pred, gt)
    idx = (gt.astype(np.int64).ravel() * N_CLASSES
           + pred.astype(np.int64).ravel())
    return np.bincount(idx, minlength=N_CLASSES * N_CLASSES).reshape(
        N_CLASSES, N_CLASSES)


def iou_per_class(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """IoU per class code; NaN where the class is absent from both masks."""
    conf = confusion(pred, gt)
    inter = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    out = np.full(N_CLASSES, np.nan)
    nz = union > 0
    out[nz] = inter[nz] / union[nz]
    return out


def miou(pred: np.ndarray, gt: np.ndarray,
         undefined: str = "exclude") -> float:
    per_class = iou_per_class(pred, gt)
    if undefined == "one":
        per_class = np.where(np.isnan(per_class), 1.0, per_class)
    defined = per_class[~np.isnan(per_class)]
    if len(defined) == 0:
        raise ValueError("no class present in either mask")
    return float(defined.mean())


@dataclass(frozen=True)
class IoUReport:
    mean_miou: float
    std_miou: float                 # population std over images
    per_image: list[float]
    class_mean: dict[str, float] = field(default_factory=dict)
    class_std: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": "1.0",
            "mean_miou_percent": round(100.0 * self.mean_miou, 2),
            "std_miou_percent": round(100.0 * self.std_miou, 2),
            "mean_miou": self.mean_miou,
            "std_miou": self.std_miou,
            "per_image": self.per_image,
            "class_mean": self.class_mean,
            "class_std": self.class_std,
        }


def dataset_miou(pairs: list, undefined: str = "exclude") -> IoUReport:
    """Aggregate over (pred, gt) mask pairs."""
    if not pairs:
        raise ValueError("empty pair list")
    per_image = []
    per_class_values: dict[str, list[float]] = {n: [] for n in CLASS_NAMES}
    for pred, gt in pairs:
        per_image.append(miou(pred, gt, undefined=undefined))
        pc = iou_per_class(pred, gt)
        if undefined == "one":
            pc = np.where(np.isnan(pc), 1.0, pc)
        for cls, val in zip(CLASS_NAMES, pc):
            if not np.isnan(val):
                per_class_values[cls].append(float(val))
    arr = np.array(per_image)
    class_mean = {c: float(np.mean(v)) for c, v in per_class_values.items() if v}
    class_std = {c: float(np.std(v)) for c, v in per_class_values.items() if v}
    return IoUReport(mean_miou=float(arr.mean()), std_miou=float(arr.std()),
                     per_image=per_image, class_mean=class_mean,
                     class_std=class_std)

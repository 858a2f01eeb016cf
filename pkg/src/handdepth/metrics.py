"""Evaluation metrics: mean depth error E (mm), the cumulative accuracy
curve F(e), and segmentation IoU.

E and F score depth over the ground-truth hand pixels only, pooled
across the whole test set (not per-image averages). Predicted and
ground-truth depths live in normalized units; the same scale factor c
used during target construction converts residuals back to millimeters.
IoU thresholds the raw mask-stage output at 0.5 against the 0/1 target
encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .preprocess import DEFAULT_DEPTH_SCALE

DEFAULT_THRESHOLDS_MM = tuple(float(e) for e in range(0, 51))
MASK_DECISION_THRESHOLD = 0.5


@dataclass
class MetricsReport:
    E_mm: float
    F_curve: list[tuple[float, float]]  # (threshold mm, fraction < threshold)
    iou: float
    sample_count: int
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "E_mm": self.E_mm,
            "iou": self.iou,
            "sample_count": self.sample_count,
            "skipped": self.skipped,
            "F_curve": [[e, f] for e, f in self.F_curve],
        }


def error_E(pred_depth, gt_depth, gt_mask, c: float = DEFAULT_DEPTH_SCALE) -> float:
    """Mean |pred - gt| over ground-truth hand pixels, in millimeters."""
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if not gt_mask.any():
        raise DataError("error_E: ground-truth mask has no foreground pixels")
    residual = np.abs(np.asarray(pred_depth, np.float64) - np.asarray(gt_depth, np.float64))
    return float(residual[gt_mask].mean() / c)


def curve_F(
    pred_depth, gt_depth, gt_mask,
    c: float = DEFAULT_DEPTH_SCALE,
    thresholds_mm=DEFAULT_THRESHOLDS_MM,
) -> list[tuple[float, float]]:
    """Fraction of hand pixels with absolute error strictly below each
    threshold; thresholds must be ascending."""
    thresholds_mm = list(thresholds_mm)
    if any(b < a for a, b in zip(thresholds_mm, thresholds_mm[1:])):
        raise DataError("curve_F: thresholds must be sorted ascending")
    gt_mask = np.asarray(gt_mask, dtype=bool)
    if not gt_mask.any():
        raise DataError("curve_F: ground-truth mask has no foreground pixels")
    err_mm = np.abs(
        np.asarray(pred_depth, np.float64)[gt_mask] - np.asarray(gt_depth, np.float64)[gt_mask]
    ) / c
    return [(float(e), float(np.mean(err_mm < e))) for e in thresholds_mm]


def iou(pred_mask_values, gt_mask, threshold: float = MASK_DECISION_THRESHOLD) -> float:
    """Intersection over union of (values > threshold) against the
    boolean ground truth; two empty masks count as a perfect 1."""
    pred = np.asarray(pred_mask_values) > threshold
    gt = np.asarray(gt_mask, dtype=bool)
    union = int(np.logical_or(pred, gt).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


@dataclass
class MetricsAccumulator:
    """Pools per-pixel statistics across samples; merges associatively."""

    c: float = DEFAULT_DEPTH_SCALE
    thresholds_mm: tuple = DEFAULT_THRESHOLDS_MM
    abs_error_sum_mm: float = 0.0
    pixel_count: int = 0
    below_counts: np.ndarray = None
    intersection: int = 0
    union: int = 0
    sample_count: int = 0
    skipped: int = 0

    def __post_init__(self):
        if self.below_counts is None:
            self.below_counts = np.zeros(len(self.thresholds_mm), dtype=np.int64)

    def update(self, pred_depth, pred_mask_values, gt_depth, gt_mask):
        gt_mask = np.asarray(gt_mask, dtype=bool)
        pred_b = np.asarray(pred_mask_values) > MASK_DECISION_THRESHOLD
        self.intersection += int(np.logical_and(pred_b, gt_mask).sum())
        self.union += int(np.logical_or(pred_b, gt_mask).sum())
        if not gt_mask.any():
            self.skipped += 1
            return
        err_mm = np.abs(
            np.asarray(pred_depth, np.float64)[gt_mask]
            - np.asarray(gt_depth, np.float64)[gt_mask]
        ) / self.c
        self.abs_error_sum_mm += float(err_mm.sum())
        self.pixel_count += err_mm.size
        for k, e in enumerate(self.thresholds_mm):
            self.below_counts[k] += int((err_mm < e).sum())
        self.sample_count += 1

    def merge(self, other: "MetricsAccumulator") -> "MetricsAccumulator":
        if tuple(other.thresholds_mm) != tuple(self.thresholds_mm) or other.c != self.c:
            raise DataError("cannot merge accumulators with different settings")
        self.abs_error_sum_mm += other.abs_error_sum_mm
        self.pixel_count += other.pixel_count
        self.below_counts += other.below_counts
        self.intersection += other.intersection
        self.union += other.union
        self.sample_count += other.sample_count
        self.skipped += other.skipped
        return self

    def report(self) -> MetricsReport:
        if self.pixel_count == 0:
            raise DataError("no hand pixels accumulated; cannot build a report")
        return MetricsReport(
            E_mm=self.abs_error_sum_mm / self.pixel_count,
            F_curve=[
                (float(e), float(n / self.pixel_count))
                for e, n in zip(self.thresholds_mm, self.below_counts)
            ],
            iou=1.0 if self.union == 0 else self.intersection / self.union,
            sample_count=self.sample_count,
            skipped=self.skipped,
        )

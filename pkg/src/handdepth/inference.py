"""Eval-mode prediction and dataset-level evaluation.

Prediction reads the final depth stage and the last mask stage (when the
model has one). Exported depth PNGs are 16-bit and carry relative
millimeters around an offset of 32768, i.e. value = round(pred / c) +
32768; no absolute depth is added back.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from .augment import to_network_example
from .errors import DataError
from .metrics import MetricsAccumulator, MetricsReport
from .model import StackedHourglass
from .preprocess import DEFAULT_DEPTH_SCALE, Sample, resize_targets
from .tensor import Tensor, no_grad

DEPTH_PNG_OFFSET = 32768


def predict_maps(
    model: StackedHourglass, samples: list[Sample], batch_size: int = 8
) -> tuple[np.ndarray, np.ndarray]:
    """Run eval-mode forward; returns (depth_preds, mask_preds) arrays of
    shape (n, out_h, out_w). Without mask stages, mask_preds holds the
    all-foreground placeholder 1."""
    cfg = model.config
    model.eval()
    depth_preds, mask_preds = [], []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            rgb = np.stack([
                to_network_example(s, cfg.input_resolution, cfg.output_resolution)[0]
                for s in chunk
            ])
            outputs = model(Tensor(rgb.astype(np.float32)))
            depth_preds.append(outputs.final.data[:, 0])
            if outputs.final_mask is not None:
                mask_preds.append(outputs.final_mask.data[:, 0])
            else:
                mask_preds.append(np.ones_like(outputs.final.data[:, 0]))
    return np.concatenate(depth_preds), np.concatenate(mask_preds)


def ground_truth_at_output(sample: Sample, output_resolution) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (depth_target, mask) at the network output grid."""
    h, w = sample.depth_target.shape
    out_h, out_w = output_resolution
    if h % out_h == 0 and w % out_w == 0:
        return resize_targets(sample.depth_target, sample.mask, (out_h, out_w))
    depth = cv2.resize(sample.depth_target, (out_w, out_h), interpolation=cv2.INTER_NEAREST)
    mask = cv2.resize(
        sample.mask.astype(np.uint8), (out_w, out_h), interpolation=cv2.INTER_NEAREST
    ).astype(bool)
    return depth, mask


def evaluate_model(
    model: StackedHourglass,
    samples: list[Sample],
    c: float = DEFAULT_DEPTH_SCALE,
    batch_size: int = 8,
    thresholds_mm=None,
) -> MetricsReport:
    """Pooled E/F/IoU over a sample list."""
    if not samples:
        raise DataError("evaluation requires a non-empty sample list")
    acc = (
        MetricsAccumulator(c=c)
        if thresholds_mm is None
        else MetricsAccumulator(c=c, thresholds_mm=tuple(thresholds_mm))
    )
    depth_preds, mask_preds = predict_maps(model, samples, batch_size)
    for pred_d, pred_m, sample in zip(depth_preds, mask_preds, samples):
        gt_depth, gt_mask = ground_truth_at_output(sample, model.config.output_resolution)
        acc.update(pred_d, pred_m, gt_depth, gt_mask)
    return acc.report()


def encode_depth_png(pred_depth: np.ndarray, c: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Normalized prediction -> uint16 grid of relative mm + offset."""
    mm = np.rint(np.asarray(pred_depth, np.float64) / c) + DEPTH_PNG_OFFSET
    return np.clip(mm, 0, 65535).astype(np.uint16)


def decode_depth_png(values: np.ndarray, c: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Inverse of :func:`encode_depth_png`, back to normalized units."""
    mm = np.asarray(values, np.float64) - DEPTH_PNG_OFFSET
    return (mm * c).astype(np.float32)


def write_predictions(
    out_dir,
    indices,
    depth_preds: np.ndarray,
    mask_preds: np.ndarray,
    c: float = DEFAULT_DEPTH_SCALE,
):
    """Per input: NNNNNN_depth_pred.png (16-bit relative mm) and
    NNNNNN_mask_pred.png (8-bit 0/255)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index, pred_d, pred_m in zip(indices, depth_preds, mask_preds):
        cv2.imwrite(str(out_dir / f"{index:06d}_depth_pred.png"), encode_depth_png(pred_d, c))
        mask_png = ((pred_m > 0.5).astype(np.uint8)) * 255
        cv2.imwrite(str(out_dir / f"{index:06d}_mask_pred.png"), mask_png)

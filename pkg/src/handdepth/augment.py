"""Training-time augmentation.

Per sample, one draw each of: horizontal flip (probability 0.5 by
default), rotation angle (uniform in +-90 degrees), crop offset (window
of 0.8 of the original extent) and three per-channel color offsets
(uniform in +-20 intensity units). Geometric transforms hit the RGB,
depth target and mask identically; the color jitter touches the RGB
only. Mask and depth target are resampled nearest-neighbor so the
background sentinel never blends into metric depths; regions exposed by
rotation or cropping become background (black RGB, mask false, depth
target 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ConfigError
from .preprocess import BACKGROUND_SENTINEL, Sample

NETWORK_INPUT_RESOLUTION = (256, 256)
NETWORK_OUTPUT_RESOLUTION = (64, 64)


@dataclass
class AugmentParams:
    flip_prob: float = 0.5
    rotation_range_deg: float = 90.0
    crop_fraction: float = 0.8
    jitter_range: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ConfigError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        if self.jitter_range < 0:
            raise ConfigError(f"jitter_range must be >= 0, got {self.jitter_range}")
        if self.rotation_range_deg < 0:
            raise ConfigError(f"rotation_range_deg must be >= 0, got {self.rotation_range_deg}")

    def to_dict(self) -> dict:
        return {
            "flip_prob": self.flip_prob,
            "rotation_range_deg": self.rotation_range_deg,
            "crop_fraction": self.crop_fraction,
            "jitter_range": self.jitter_range,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        return cls(**d)


def rng_for_sample(seed: int, index: int) -> np.random.Generator:
    """Per-sample stream: derived as seed XOR sample index so samples can
    be augmented in parallel with reproducible draws."""
    return np.random.default_rng((seed ^ index) & 0xFFFFFFFFFFFFFFFF)


def _rotate(rgb, depth_target, mask, angle_deg):
    h, w = mask.shape
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    matrix = cv2.getRotationMatrix2D(center, angle_deg, 1.0)
    rgb_out = cv2.warpAffine(
        rgb, matrix, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=(0.0, 0.0, 0.0),
    )
    depth_out = cv2.warpAffine(
        depth_target, matrix, (w, h), flags=cv2.INTER_NEAREST,
        borderMode=cv2.BORDER_CONSTANT, borderValue=BACKGROUND_SENTINEL,
    )
    mask_out = cv2.warpAffine(
        mask.astype(np.uint8), matrix, (w, h), flags=cv2.INTER_NEAREST,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    ).astype(bool)
    return rgb_out, depth_out, mask_out


def augment_sample(sample: Sample, params: AugmentParams, rng: np.random.Generator) -> Sample:
    """Apply one drawn flip/rotation/crop/jitter to a sample.

    All four decisions are drawn in a fixed order regardless of whether
    they end up as no-ops, so a fixed RNG state fully determines the
    result. The returned sample keeps all channels aligned at the
    cropped resolution; resize to network resolutions afterwards.
    """
    flip = rng.random() < params.flip_prob
    angle = rng.uniform(-params.rotation_range_deg, params.rotation_range_deg)
    h, w = sample.mask.shape
    crop_h = max(1, round(h * params.crop_fraction))
    crop_w = max(1, round(w * params.crop_fraction))
    off_y = int(rng.integers(0, h - crop_h + 1))
    off_x = int(rng.integers(0, w - crop_w + 1))
    jitter = rng.uniform(-params.jitter_range, params.jitter_range, size=3)

    rgb = np.ascontiguousarray(sample.rgb, dtype=np.float32)
    depth_target = np.ascontiguousarray(sample.depth_target, dtype=np.float32)
    depth_mm = np.ascontiguousarray(sample.depth_mm, dtype=np.float32)
    mask = sample.mask

    if flip:
        rgb = rgb[:, ::-1].copy()
        depth_target = depth_target[:, ::-1].copy()
        depth_mm = depth_mm[:, ::-1].copy()
        mask = mask[:, ::-1].copy()
    if angle != 0.0:
        rgb, depth_target, mask = _rotate(rgb, depth_target, mask, angle)
        h_, w_ = depth_mm.shape
        depth_mm = cv2.warpAffine(
            depth_mm,
            cv2.getRotationMatrix2D(((w_ - 1) / 2.0, (h_ - 1) / 2.0), angle, 1.0),
            (w_, h_), flags=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        )

    rgb = rgb[off_y:off_y + crop_h, off_x:off_x + crop_w]
    depth_target = depth_target[off_y:off_y + crop_h, off_x:off_x + crop_w]
    depth_mm = depth_mm[off_y:off_y + crop_h, off_x:off_x + crop_w]
    mask = mask[off_y:off_y + crop_h, off_x:off_x + crop_w]

    rgb = np.clip(rgb + jitter[None, None, :].astype(np.float32), 0.0, 255.0)

    return Sample(
        rgb=rgb.astype(np.float32),
        depth_mm=depth_mm.copy(),
        mask=mask.copy(),
        depth_target=depth_target.copy(),
    )


def to_network_example(
    sample: Sample,
    input_resolution=NETWORK_INPUT_RESOLUTION,
    output_resolution=NETWORK_OUTPUT_RESOLUTION,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic resize into (rgb01 CHW float32, mask01 HW float32,
    depth target HW float32) at the network's resolutions."""
    in_h, in_w = input_resolution
    out_h, out_w = output_resolution
    rgb = np.ascontiguousarray(sample.rgb, dtype=np.float32)
    if rgb.shape[:2] != (in_h, in_w):
        rgb = cv2.resize(rgb, (in_w, in_h), interpolation=cv2.INTER_LINEAR)
    rgb01 = np.ascontiguousarray(rgb.transpose(2, 0, 1)) / np.float32(255.0)

    depth_target = np.ascontiguousarray(sample.depth_target, dtype=np.float32)
    mask01 = sample.mask.astype(np.float32)
    if depth_target.shape != (out_h, out_w):
        depth_target = cv2.resize(depth_target, (out_w, out_h), interpolation=cv2.INTER_NEAREST)
        mask01 = cv2.resize(mask01, (out_w, out_h), interpolation=cv2.INTER_NEAREST)
    return rgb01, mask01, depth_target


def augment_to_example(
    sample: Sample,
    params: AugmentParams,
    rng: np.random.Generator,
    input_resolution=NETWORK_INPUT_RESOLUTION,
    output_resolution=NETWORK_OUTPUT_RESOLUTION,
):
    """Draw-and-apply augmentation, then resize to network resolutions."""
    return to_network_example(
        augment_sample(sample, params, rng), input_resolution, output_resolution
    )

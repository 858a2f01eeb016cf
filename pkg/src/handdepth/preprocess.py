"""Training-target construction from aligned RGB-D pairs.

The hand is assumed to be the object closest to the camera, so the
foreground mask falls out of a depth threshold against the scene
minimum. Depths are then recentered on the hand's mean and scaled into
[-1, 1]; background pixels carry the sentinel value 1. Depth pixels with
value 0 are sensor no-returns: they never enter the minimum or the mean
and always count as background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

DEFAULT_THRESHOLD_MM = 300.0
DEFAULT_DEPTH_SCALE = 1.0 / 200.0  # 1/mm
BACKGROUND_SENTINEL = 1.0


@dataclass
class CameraModel:
    """Pinhole intrinsics of both sensors plus the depth-to-color rigid
    transform (rotation 3x3, translation in meters)."""

    depth_intrinsics: tuple[float, float, float, float]  # fx, fy, cx, cy
    color_intrinsics: tuple[float, float, float, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation_m: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation_m = np.asarray(self.translation_m, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise DataError(f"camera rotation must be 3x3, got {self.rotation.shape}")
        if self.translation_m.shape != (3,):
            raise DataError(f"camera translation must be a 3-vector, got {self.translation_m.shape}")
        should_be_identity = self.rotation @ self.rotation.T
        if not np.allclose(should_be_identity, np.eye(3), atol=1e-6):
            raise DataError("camera rotation is not orthonormal (R @ R.T != I at 1e-6)")
        if not np.isclose(np.linalg.det(self.rotation), 1.0, atol=1e-6):
            raise DataError("camera rotation determinant != +1 at 1e-6")

    def to_dict(self) -> dict:
        return {
            "depth_intrinsics": list(self.depth_intrinsics),
            "color_intrinsics": list(self.color_intrinsics),
            "rotation": self.rotation.tolist(),
            "translation_m": self.translation_m.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(
            depth_intrinsics=tuple(d["depth_intrinsics"]),
            color_intrinsics=tuple(d["color_intrinsics"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation_m=np.asarray(d["translation_m"], dtype=np.float64),
        )


@dataclass
class Sample:
    """Aligned RGB image, metric depth, foreground mask and the derived
    normalized depth target, all sharing one resolution."""

    rgb: np.ndarray          # (H, W, 3) float32, values 0..255
    depth_mm: np.ndarray     # (H, W) float32, 0 = no return
    mask: np.ndarray         # (H, W) bool
    depth_target: np.ndarray  # (H, W) float32 in [-1, 1], background == 1

    @property
    def resolution(self) -> tuple[int, int]:
        return self.depth_mm.shape

    def validate(self):
        h, w = self.depth_mm.shape
        for name, arr, shape in (
            ("rgb", self.rgb, (h, w, 3)),
            ("mask", self.mask, (h, w)),
            ("depth_target", self.depth_target, (h, w)),
        ):
            if arr.shape != shape:
                raise ShapeError(f"sample {name} shape {arr.shape} != {shape}")
        if self.depth_target.min() < -1.0 or self.depth_target.max() > 1.0:
            raise DataError("depth_target outside [-1, 1]")
        background = ~self.mask
        if background.any() and not np.all(self.depth_target[background] == BACKGROUND_SENTINEL):
            raise DataError("background depth_target pixels must equal the sentinel 1")
        if self.mask.any() and not np.all(self.depth_mm[self.mask] > 0):
            raise DataError("foreground pixels must have valid (positive) depth")


def compute_foreground_mask(depth_mm: np.ndarray, t: float = DEFAULT_THRESHOLD_MM) -> np.ndarray:
    """Threshold against the scene minimum: a pixel is foreground iff its
    depth is valid and below (min valid depth + t)."""
    if t <= 0:
        raise DataError(f"threshold t must be positive, got {t}")
    depth_mm = np.asarray(depth_mm)
    valid = depth_mm > 0
    if not valid.any():
        raise DataError("depth map has no valid (positive) pixels")
    d_min = depth_mm[valid].min()
    return valid & (depth_mm < d_min + t)


def normalize_depth(
    depth_mm: np.ndarray, mask: np.ndarray, c: float = DEFAULT_DEPTH_SCALE
) -> np.ndarray:
    """Recenter foreground depths on their mean, scale by ``c`` and clamp
    to [-1, 1]; background pixels get the sentinel 1."""
    if c <= 0:
        raise DataError(f"depth scale c must be positive, got {c}")
    depth_mm = np.asarray(depth_mm, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("cannot normalize depth: empty foreground mask")
    mean = depth_mm[mask].mean()
    target = np.full(depth_mm.shape, BACKGROUND_SENTINEL, dtype=np.float32)
    fg = np.clip(c * (depth_mm[mask] - mean), -1.0, 1.0)
    target[mask] = fg.astype(np.float32)
    return target


def align_depth_to_rgb(
    depth_mm: np.ndarray, cam: CameraModel, out_resolution: tuple[int, int]
) -> np.ndarray:
    """Reproject a depth map into the color camera's frame.

    Valid pixels are back-projected through the depth intrinsics,
    moved by the rigid transform, and projected through the color
    intrinsics; collisions keep the nearest point. Output pixels nothing
    maps to stay 0.
    """
    depth_mm = np.asarray(depth_mm, dtype=np.float64)
    h, w = depth_mm.shape
    out_h, out_w = out_resolution
    fx_d, fy_d, cx_d, cy_d = cam.depth_intrinsics
    fx_c, fy_c, cx_c, cy_c = cam.color_intrinsics

    vs, us = np.nonzero(depth_mm > 0)
    if vs.size == 0:
        return np.zeros((out_h, out_w), dtype=np.float32)
    z = depth_mm[vs, us]
    x = (us - cx_d) / fx_d * z
    y = (vs - cy_d) / fy_d * z
    points = np.stack([x, y, z], axis=0)  # mm
    moved = cam.rotation @ points + (cam.translation_m * 1000.0)[:, None]
    xm, ym, zm = moved
    in_front = zm > 0
    xm, ym, zm = xm[in_front], ym[in_front], zm[in_front]
    uc = np.rint(fx_c * xm / zm + cx_c).astype(np.int64)
    vc = np.rint(fy_c * ym / zm + cy_c).astype(np.int64)
    inside = (uc >= 0) & (uc < out_w) & (vc >= 0) & (vc < out_h)
    uc, vc, zm = uc[inside], vc[inside], zm[inside]

    out = np.full((out_h, out_w), np.inf, dtype=np.float64)
    # z-buffer: nearest depth wins on collisions
    np.minimum.at(out, (vc, uc), zm)
    out[~np.isfinite(out)] = 0.0
    return out.astype(np.float32)


def resize_targets(
    depth_target: np.ndarray, mask: np.ndarray, out: tuple[int, int] = (64, 64)
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor subsampling of both target channels.

    Requires the input extents to be integer multiples of the output so
    the sampling grid is exact; output values are a subset of input
    values, which keeps metric depths from blending with the background
    sentinel at hand boundaries.
    """
    depth_target = np.asarray(depth_target)
    mask = np.asarray(mask)
    if depth_target.shape != mask.shape:
        raise ShapeError(f"depth_target {depth_target.shape} and mask {mask.shape} differ")
    h, w = depth_target.shape
    out_h, out_w = out
    if h % out_h or w % out_w:
        raise ShapeError(
            f"resize_targets: input extents ({h}, {w}) are not integer multiples of ({out_h}, {out_w})"
        )
    rows = np.arange(out_h) * (h // out_h)
    cols = np.arange(out_w) * (w // out_w)
    return depth_target[np.ix_(rows, cols)].copy(), mask[np.ix_(rows, cols)].copy()


def make_sample(
    rgb: np.ndarray,
    depth_mm: np.ndarray,
    t: float = DEFAULT_THRESHOLD_MM,
    c: float = DEFAULT_DEPTH_SCALE,
) -> Sample:
    """Build a full Sample (mask + normalized target) from an aligned pair."""
    rgb = np.asarray(rgb, dtype=np.float32)
    depth_mm = np.asarray(depth_mm, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"rgb must be (H, W, 3), got {rgb.shape}")
    if depth_mm.shape != rgb.shape[:2]:
        raise ShapeError(f"depth {depth_mm.shape} does not match rgb {rgb.shape[:2]}")
    mask = compute_foreground_mask(depth_mm, t)
    target = normalize_depth(depth_mm, mask, c)
    sample = Sample(rgb=rgb, depth_mm=depth_mm, mask=mask, depth_target=target)
    sample.validate()
    return sample

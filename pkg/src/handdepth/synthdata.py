"""Procedural aligned RGB-D hand stand-in.

Renders an ellipse "palm" plus a few capsule "fingers" as analytic
height fields into a z-buffer, at a random pose and distance. The RGB
shading is a fixed-light Lambertian term on the surface normals, so
appearance determines depth and a network can actually learn the
mapping. The exact coverage mask falls out of the z-buffer. Background
is kept strictly deeper than the hand's far side plus the segmentation
threshold, so the depth-threshold mask reproduces the exact one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .preprocess import Sample, make_sample

_LIGHT_DIR = np.array([0.35, -0.45, 0.85])
_LIGHT_DIR = _LIGHT_DIR / np.linalg.norm(_LIGHT_DIR)

# hand-internal depth relief; its total span stays well under the 300 mm
# segmentation threshold and under the 200 mm clamp range of the target
_MAX_PALM_BULGE_MM = 60.0
_MAX_FINGER_OFFSET_MM = 20.0
_BACKGROUND_MARGIN_MM = 50.0


@dataclass
class SynthParams:
    seed: int = 0
    num_samples: int = 16
    depth_range_mm: tuple[float, float] = (400.0, 1000.0)
    finger_count_range: tuple[int, int] = (2, 5)
    base_color: tuple[float, float, float] = (214.0, 168.0, 140.0)
    tint_jitter: float = 25.0
    background: str = "clutter"  # flat | gradient | clutter
    resolution: tuple[int, int] = (256, 256)

    def __post_init__(self):
        lo, hi = self.depth_range_mm
        if lo <= 0 or lo >= hi:
            raise ConfigError(f"depth range must satisfy 0 < min < max, got {self.depth_range_mm}")
        if self.background not in ("flat", "gradient", "clutter"):
            raise ConfigError(f"unknown background style {self.background!r}")
        f_lo, f_hi = self.finger_count_range
        if not 1 <= f_lo <= f_hi:
            raise ConfigError(f"bad finger count range {self.finger_count_range}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "num_samples": self.num_samples,
            "depth_range_mm": list(self.depth_range_mm),
            "finger_count_range": list(self.finger_count_range),
            "base_color": list(self.base_color),
            "tint_jitter": self.tint_jitter,
            "background": self.background,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        d = dict(d)
        for key in ("depth_range_mm", "finger_count_range", "base_color", "resolution"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _ellipse_height(xx, yy, cx, cy, ax, ay, phi, bulge):
    """Spherical-cap height field over a rotated ellipse footprint."""
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(phi), np.sin(phi)
    u = (c * dx + s * dy) / ax
    v = (-s * dx + c * dy) / ay
    r2 = u * u + v * v
    inside = r2 <= 1.0
    height = np.zeros_like(xx)
    height[inside] = bulge * np.sqrt(1.0 - r2[inside])
    return height, inside


def _capsule_height(xx, yy, p0, p1, radius, bulge):
    """Height field of a rounded tube along segment p0-p1."""
    d = p1 - p0
    length2 = float(d @ d)
    rel = np.stack([xx - p0[0], yy - p0[1]], axis=-1)
    t = np.clip((rel @ d) / max(length2, 1e-9), 0.0, 1.0)
    closest = p0[None, None, :] + t[..., None] * d[None, None, :]
    dist = np.hypot(xx - closest[..., 0], yy - closest[..., 1])
    inside = dist <= radius
    height = np.zeros_like(xx)
    height[inside] = bulge * np.sqrt(1.0 - (dist[inside] / radius) ** 2)
    return height, inside


def _draw_hand_depth(rng, h, w, z0):
    """Z-buffer the palm and fingers; returns (depth_mm, mask)."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    depth = np.full((h, w), np.inf)

    cx = rng.uniform(0.35 * w, 0.65 * w)
    cy = rng.uniform(0.35 * h, 0.65 * h)
    ax = rng.uniform(0.15 * w, 0.24 * w)
    ay = rng.uniform(0.11 * h, min(0.19 * h, ax))
    phi = rng.uniform(0, np.pi)
    bulge = rng.uniform(0.5, 1.0) * _MAX_PALM_BULGE_MM
    height, inside = _ellipse_height(xx, yy, cx, cy, ax, ay, phi, bulge)
    depth[inside] = np.minimum(depth[inside], z0 - height[inside])

    n_fingers = int(rng.integers(2, 6))
    spread = rng.uniform(0.5, 1.1)
    base_angle = phi + rng.uniform(-0.4, 0.4)
    for i in range(n_fingers):
        ang = base_angle + spread * (i / max(n_fingers - 1, 1) - 0.5)
        direction = np.array([np.cos(ang), np.sin(ang)])
        start = np.array([cx, cy]) + direction * np.array([ax, ay]).mean() * 0.75
        length = rng.uniform(0.18, 0.34) * min(h, w)
        p1 = start + direction * length
        radius = rng.uniform(0.035, 0.065) * min(h, w)
        f_bulge = rng.uniform(0.35, 0.7) * _MAX_PALM_BULGE_MM
        z_f = z0 + rng.uniform(-_MAX_FINGER_OFFSET_MM, _MAX_FINGER_OFFSET_MM)
        height, inside = _capsule_height(xx, yy, start, p1, radius, f_bulge)
        depth[inside] = np.minimum(depth[inside], z_f - height[inside])

    mask = np.isfinite(depth)
    return depth, mask


def _shade(depth_mm, mask, base_color, rng, tint_jitter):
    """Lambertian shading from the depth gradient (fixed light)."""
    gy, gx = np.gradient(depth_mm)
    # surface normal of z(x, y): (-dz/dx, -dz/dy, 1), z decreasing toward camera
    nx, ny, nz = gx, gy, np.ones_like(depth_mm)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    diffuse = np.clip((nx * _LIGHT_DIR[0] + ny * _LIGHT_DIR[1] + nz * _LIGHT_DIR[2]) / norm, 0, 1)
    shade = 0.35 + 0.65 * diffuse
    tint = rng.uniform(-tint_jitter, tint_jitter, size=3)
    rgb = shade[..., None] * (np.asarray(base_color) + tint)[None, None, :]
    return np.clip(rgb, 0, 255)


def _background(rng, h, w, style, z_base):
    if style == "flat":
        depth = np.full((h, w), z_base)
        rgb = np.full((h, w, 3), rng.uniform(40, 90), dtype=np.float64)
    elif style == "gradient":
        ramp = np.linspace(0, 120.0, w)[None, :].repeat(h, axis=0)
        depth = z_base + ramp
        rgb = np.stack([ramp * 0.5 + 40, ramp * 0.4 + 50, ramp * 0.6 + 45], axis=-1)
    else:  # clutter: blocky noise, still strictly behind the hand
        coarse = rng.uniform(0, 100.0, size=(h // 16 + 1, w // 16 + 1))
        depth = z_base + np.kron(coarse, np.ones((16, 16)))[:h, :w]
        rgb = rng.uniform(30, 110, size=(h // 16 + 1, w // 16 + 1, 3))
        rgb = np.kron(rgb, np.ones((16, 16, 1)))[:h, :w]
    return depth, rgb


def generate_raw(params: SynthParams, index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One sample: (rgb uint8 HxWx3, depth_mm float32 HxW, exact mask)."""
    if index < 0 or (params.num_samples and index >= params.num_samples):
        raise DataError(f"sample index {index} outside corpus of {params.num_samples}")
    rng = np.random.default_rng((params.seed ^ index) & 0xFFFFFFFFFFFFFFFF)
    h, w = params.resolution
    lo, hi = params.depth_range_mm
    min_area = 0.002 * h * w

    for _ in range(10):
        # keep the full relief inside the configured distance band
        z0 = rng.uniform(lo + _MAX_PALM_BULGE_MM + _MAX_FINGER_OFFSET_MM,
                         hi - _MAX_FINGER_OFFSET_MM)
        hand_depth, mask = _draw_hand_depth(rng, h, w, z0)
        if mask.sum() >= min_area:
            break
    else:
        raise DataError(f"could not draw a non-degenerate hand for sample {index}")

    hand_max = hand_depth[mask].max()
    z_bg = hand_max + 300.0 + _BACKGROUND_MARGIN_MM
    bg_depth, bg_rgb = _background(rng, h, w, params.background, z_bg)

    depth = np.where(mask, hand_depth, bg_depth)
    hand_rgb = _shade(np.where(mask, hand_depth, hand_depth[mask].mean()), mask,
                      params.base_color, rng, params.tint_jitter)
    rgb = np.where(mask[..., None], hand_rgb, bg_rgb)
    return rgb.astype(np.uint8), depth.astype(np.float32), mask


def generate_sample(params: SynthParams, index: int) -> Sample:
    """Render and run the standard target construction; the thresholded
    mask is guaranteed to match the renderer's exact coverage."""
    rgb, depth_mm, _ = generate_raw(params, index)
    return make_sample(rgb.astype(np.float32), depth_mm)


def generate_corpus(params: SynthParams) -> list[Sample]:
    return [generate_sample(params, i) for i in range(params.num_samples)]


def write_corpus(directory, params: SynthParams):
    """Emit the corpus in the standard dataset directory format."""
    from .dataset import write_raw_pair

    for i in range(params.num_samples):
        rgb, depth_mm, _ = generate_raw(params, i)
        write_raw_pair(directory, i, rgb, depth_mm)

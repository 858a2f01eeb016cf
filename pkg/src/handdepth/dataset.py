"""Dataset directory format and the `prepare` pipeline.

Per sample the directory holds ``NNNNNN_rgb.png`` (8-bit RGB) and
``NNNNNN_depth.png`` (16-bit single channel, value = millimeters), with
an optional ``camera.json`` describing a :class:`CameraModel` whose
presence triggers depth-to-color reprojection. ``prepare`` adds
``NNNNNN_mask.png`` (8-bit, 0/255), ``NNNNNN_target.f32`` (raw
little-endian float32, 64x64 row-major) and ``manifest.json`` listing
accepted and rejected samples.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import cv2
import numpy as np

from .errors import DataError
from .preprocess import (
    DEFAULT_DEPTH_SCALE,
    DEFAULT_THRESHOLD_MM,
    CameraModel,
    Sample,
    align_depth_to_rgb,
    make_sample,
    resize_targets,
)

TARGET_RESOLUTION = (64, 64)
_RGB_RE = re.compile(r"^(\d{6})_rgb\.png$")


def sample_indices(directory) -> list[int]:
    """Indices of all rgb/depth pairs present in a dataset directory."""
    directory = Path(directory)
    indices = []
    for path in directory.iterdir():
        m = _RGB_RE.match(path.name)
        if m and (directory / f"{m.group(1)}_depth.png").exists():
            indices.append(int(m.group(1)))
    return sorted(indices)


def write_raw_pair(directory, index: int, rgb_uint8: np.ndarray, depth_mm: np.ndarray):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bgr = cv2.cvtColor(np.asarray(rgb_uint8, dtype=np.uint8), cv2.COLOR_RGB2BGR)
    cv2.imwrite(str(directory / f"{index:06d}_rgb.png"), bgr)
    depth_u16 = np.clip(np.rint(np.asarray(depth_mm)), 0, 65535).astype(np.uint16)
    cv2.imwrite(str(directory / f"{index:06d}_depth.png"), depth_u16)


def read_raw_pair(directory, index: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns (rgb float32 HxWx3 in 0..255, depth_mm float32 HxW)."""
    directory = Path(directory)
    rgb_path = directory / f"{index:06d}_rgb.png"
    depth_path = directory / f"{index:06d}_depth.png"
    bgr = cv2.imread(str(rgb_path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataError(f"cannot read {rgb_path}")
    depth = cv2.imread(str(depth_path), cv2.IMREAD_UNCHANGED)
    if depth is None:
        raise DataError(f"cannot read {depth_path}")
    if depth.ndim != 2:
        raise DataError(f"{depth_path} is not single-channel")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB).astype(np.float32)
    return rgb, depth.astype(np.float32)


def load_camera(directory) -> CameraModel | None:
    path = Path(directory) / "camera.json"
    if not path.exists():
        return None
    with open(path) as f:
        return CameraModel.from_dict(json.load(f))


def save_camera(directory, cam: CameraModel):
    with open(Path(directory) / "camera.json", "w") as f:
        json.dump(cam.to_dict(), f, indent=2)


def load_sample(
    directory,
    index: int,
    t: float = DEFAULT_THRESHOLD_MM,
    c: float = DEFAULT_DEPTH_SCALE,
    camera: CameraModel | None = None,
) -> Sample:
    """Read a raw pair and build its targets; reprojects depth first when
    a camera model is given."""
    rgb, depth = read_raw_pair(directory, index)
    if camera is not None:
        depth = align_depth_to_rgb(depth, camera, rgb.shape[:2])
    return make_sample(rgb, depth, t=t, c=c)


def load_dataset(
    directory,
    t: float = DEFAULT_THRESHOLD_MM,
    c: float = DEFAULT_DEPTH_SCALE,
) -> list[Sample]:
    """Load every usable sample; unusable ones are silently skipped (the
    manifest from `prepare` records why)."""
    directory = Path(directory)
    camera = load_camera(directory)
    samples = []
    for index in sample_indices(directory):
        try:
            samples.append(load_sample(directory, index, t=t, c=c, camera=camera))
        except DataError:
            continue
    return samples


def prepare_dataset(
    directory,
    t: float = DEFAULT_THRESHOLD_MM,
    c: float = DEFAULT_DEPTH_SCALE,
) -> dict:
    """Validate every pair, write mask/target artifacts and the manifest.

    Returns the manifest dict. A sample is rejected (with a reason) when
    its depth map is unusable or its resolution is not an integer
    multiple of the 64x64 target grid.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    camera = load_camera(directory)
    indices = sample_indices(directory)
    if not indices:
        raise DataError(f"no NNNNNN_rgb.png / NNNNNN_depth.png pairs in {directory}")

    accepted, rejected = [], []
    for index in indices:
        try:
            sample = load_sample(directory, index, t=t, c=c, camera=camera)
            target64, _ = resize_targets(sample.depth_target, sample.mask, TARGET_RESOLUTION)
        except Exception as exc:  # noqa: BLE001 - reason goes in the manifest
            rejected.append({"index": index, "reason": str(exc)})
            continue
        mask_png = (sample.mask.astype(np.uint8)) * 255
        cv2.imwrite(str(directory / f"{index:06d}_mask.png"), mask_png)
        target64.astype("<f4").tofile(directory / f"{index:06d}_target.f32")
        accepted.append(index)

    manifest = {
        "accepted": accepted,
        "rejected": rejected,
        "params": {"t_mm": t, "c_per_mm": c},
        "target_resolution": list(TARGET_RESOLUTION),
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_manifest(directory) -> dict | None:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        return None
    with open(path) as f:
        return json.load(f)


def read_target_f32(directory, index: int, resolution=TARGET_RESOLUTION) -> np.ndarray:
    data = np.fromfile(Path(directory) / f"{index:06d}_target.f32", dtype="<f4")
    expected = resolution[0] * resolution[1]
    if data.size != expected:
        raise DataError(f"target file for sample {index} has {data.size} values, expected {expected}")
    return data.reshape(resolution)

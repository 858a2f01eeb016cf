"""Staged supervision loss.

Every stage is scored by the mean squared error between its output and
its target map (the segmentation mask for the first stages, the depth
map for the rest), background pixels included; the training loss is the
plain sum of the per-stage terms, averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .model import StageOutputs
from .tensor import Tensor


@dataclass
class LossBreakdown:
    stage_values: list[float]  # first S_M mask terms, then S_D depth terms
    mask_stages: int
    total: Tensor  # differentiable scalar

    @property
    def total_value(self) -> float:
        return float(sum(self.stage_values))

    @property
    def mask_values(self) -> list[float]:
        return self.stage_values[: self.mask_stages]

    @property
    def depth_values(self) -> list[float]:
        return self.stage_values[self.mask_stages:]


def _as_target_tensor(target, like: Tensor) -> Tensor:
    if isinstance(target, Tensor):
        return target.detach()
    arr = np.asarray(target, dtype=like.data.dtype)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    if arr.shape[0] == 1 and like.shape[0] > 1:
        arr = np.broadcast_to(arr, (like.shape[0],) + arr.shape[1:]).copy()
    return Tensor(arr)


def staged_loss(outputs: StageOutputs, mask_target, depth_target, config=None) -> LossBreakdown:
    """MSE per stage against its target map, summed into one scalar.

    Targets may be (h, w), (b, h, w) or (b, 1, h, w) arrays; they are
    broadcast to the batch. Each term is the mean over batch and the
    full pixel grid, so per sample it is the squared residual sum
    divided by the pixel count.
    """
    if config is not None and (
        len(outputs) != config.num_stages or outputs.mask_stages != config.mask_stages
    ):
        raise ShapeError(
            f"stage count mismatch: got {len(outputs)} outputs ({outputs.mask_stages} mask) "
            f"but config wants {config.num_stages} ({config.mask_stages} mask)"
        )
    first = outputs.outputs[0]
    mask_t = _as_target_tensor(mask_target, first)
    depth_t = _as_target_tensor(depth_target, first)

    stage_values: list[float] = []
    total = None
    for s, out in enumerate(outputs):
        target = mask_t if s < outputs.mask_stages else depth_t
        if out.shape != target.shape:
            raise ShapeError(
                f"stage {s} output shape {tuple(out.shape)} != target shape {tuple(target.shape)}"
            )
        diff = T.sub(out, target)
        term = T.tmean(T.mul(diff, diff))
        stage_values.append(term.item())
        total = term if total is None else T.add(total, term)
    return LossBreakdown(stage_values=stage_values, mask_stages=outputs.mask_stages, total=total)

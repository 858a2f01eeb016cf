"""The stacked hourglass depth network.

Structure: an init stem takes the 256x256 RGB input down to 64x64
feature maps (7x7 stride-2 convolution, residual block, 2x2 max pool,
residual block); each of the stacked stages runs an hourglass, a link
block, and a 1x1 convolution producing its single-channel supervised
output. The first ``mask_stages`` outputs target the segmentation mask,
the remaining ``depth_stages`` target the depth map, the last one being
the network's final output. Between stages, the stage input, the
remapped link features and the remapped stage output are summed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_stages: int = 6
    mask_stages: int = 3
    depth_stages: int = 3
    feature_width: int = 256
    input_resolution: tuple[int, int] = (256, 256)
    output_resolution: tuple[int, int] = (64, 64)
    halvings_per_hourglass: int = 4

    def __post_init__(self):
        self.input_resolution = tuple(self.input_resolution)
        self.output_resolution = tuple(self.output_resolution)
        self.validate()

    def validate(self):
        if self.num_stages < 1:
            raise ConfigError("num_stages must be >= 1")
        if self.mask_stages < 0:
            raise ConfigError("mask_stages must be >= 0")
        if self.depth_stages < 1:
            raise ConfigError("depth_stages must be >= 1")
        if self.mask_stages + self.depth_stages != self.num_stages:
            raise ConfigError(
                f"mask_stages + depth_stages must equal num_stages "
                f"({self.mask_stages} + {self.depth_stages} != {self.num_stages})"
            )
        if self.feature_width < 8 or self.feature_width % 8:
            raise ConfigError(
                f"feature_width must be a positive multiple of 8, got {self.feature_width}"
            )
        for axis in range(2):
            if self.input_resolution[axis] != 4 * self.output_resolution[axis]:
                raise ConfigError(
                    f"input resolution must be 4x the output resolution per axis, got "
                    f"{self.input_resolution} vs {self.output_resolution}"
                )
            if self.output_resolution[axis] % (1 << self.halvings_per_hourglass):
                raise ConfigError(
                    f"output resolution {self.output_resolution} is not divisible by "
                    f"2^{self.halvings_per_hourglass}"
                )

    def to_dict(self) -> dict:
        return {
            "num_stages": self.num_stages,
            "mask_stages": self.mask_stages,
            "depth_stages": self.depth_stages,
            "feature_width": self.feature_width,
            "input_resolution": list(self.input_resolution),
            "output_resolution": list(self.output_resolution),
            "halvings_per_hourglass": self.halvings_per_hourglass,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_stages=int(d["num_stages"]),
            mask_stages=int(d["mask_stages"]),
            depth_stages=int(d["depth_stages"]),
            feature_width=int(d["feature_width"]),
            input_resolution=tuple(d.get("input_resolution", (256, 256))),
            output_resolution=tuple(d.get("output_resolution", (64, 64))),
            halvings_per_hourglass=int(d.get("halvings_per_hourglass", 4)),
        )


@dataclass
class StageOutputs:
    """Ordered per-stage single-channel outputs; the first
    ``mask_stages`` are mask estimates, the rest depth estimates."""

    outputs: list[Tensor]
    mask_stages: int

    def __post_init__(self):
        if not 0 <= self.mask_stages <= len(self.outputs):
            raise ConfigError("mask_stages outside [0, num_stages]")

    def __len__(self):
        return len(self.outputs)

    def __iter__(self):
        return iter(self.outputs)

    @property
    def mask_outputs(self) -> list[Tensor]:
        return self.outputs[: self.mask_stages]

    @property
    def depth_outputs(self) -> list[Tensor]:
        return self.outputs[self.mask_stages:]

    @property
    def final(self) -> Tensor:
        return self.outputs[-1]

    @property
    def final_mask(self) -> Tensor | None:
        return self.outputs[self.mask_stages - 1] if self.mask_stages else None


class Module:
    """Minimal parameter/submodule container with train/eval modes."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for m in self._modules.values():
            yield from m.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items):
        super().__init__()
        self._items = list(items)
        for i, m in enumerate(self._items):
            self._modules[str(i)] = m

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(
            he_normal(rng, (out_ch, in_ch, kernel, kernel), in_ch * kernel * kernel, dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    def __init__(self, ch, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(ch, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(ch, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(ch, dtype=dtype))
        self.register_buffer("running_var", np.ones(ch, dtype=dtype))

    def forward(self, x):
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training=self.training, momentum=self.momentum, eps=self.eps,
        )


class ResidualBlock(Module):
    """Three chained BN-ReLU-conv sub-stages with widths f_out/2, f_out/4
    and f_out/4 whose outputs are feature-concatenated, plus a skip (a
    1x1 convolution when the widths differ)."""

    def __init__(self, f_in, f_out, rng, dtype=np.float32):
        super().__init__()
        if f_out % 4:
            raise ConfigError(f"residual block width must be divisible by 4, got {f_out}")
        half, quarter = f_out // 2, f_out // 4
        self.bn1 = BatchNorm2d(f_in, dtype)
        self.conv1 = Conv2d(f_in, half, 3, rng, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(half, dtype)
        self.conv2 = Conv2d(half, quarter, 3, rng, padding=1, dtype=dtype)
        self.bn3 = BatchNorm2d(quarter, dtype)
        self.conv3 = Conv2d(quarter, quarter, 3, rng, padding=1, dtype=dtype)
        self.skip = Conv2d(f_in, f_out, 1, rng, dtype=dtype) if f_in != f_out else None

    def forward(self, x):
        y1 = self.conv1(T.relu(self.bn1(x)))
        y2 = self.conv2(T.relu(self.bn2(y1)))
        y3 = self.conv3(T.relu(self.bn3(y2)))
        branch = T.concat_features([y1, y2, y3])
        skip = x if self.skip is None else self.skip(x)
        return T.add(branch, skip)


class Hourglass(Module):
    """Symmetric encoder-decoder: ``halvings`` pooling steps down to the
    bottleneck, then the mirror image back up, adding a long skip
    (passed through its own residual block) at every resolution.

    ``last_bottleneck_hw`` records the bottleneck's spatial extent on
    each forward pass.
    """

    def __init__(self, f, rng, halvings=4, dtype=np.float32):
        super().__init__()
        self.halvings = halvings
        if halvings < 1:
            raise ConfigError("hourglass needs at least one halving step")
        self.skip_blocks = ModuleList([ResidualBlock(f, f, rng, dtype) for _ in range(halvings)])
        self.down_blocks = ModuleList([ResidualBlock(f, f, rng, dtype) for _ in range(halvings)])
        self.up_blocks = ModuleList([ResidualBlock(f, f, rng, dtype) for _ in range(halvings)])
        self.bottleneck = ResidualBlock(f, f, rng, dtype)
        self.last_bottleneck_hw = None

    def forward(self, x):
        h, w = x.shape[2], x.shape[3]
        step = 1 << self.halvings
        if h % step or w % step:
            raise ShapeError(
                f"hourglass input extent ({h}, {w}) not divisible by 2^{self.halvings} (axes 2, 3)"
            )
        return self._level(x, 0)

    def _level(self, x, level):
        up = self.skip_blocks[level](x)
        low = self.down_blocks[level](T.max_pool2d(x))
        if level + 1 < self.halvings:
            inner = self._level(low, level + 1)
        else:
            inner = self.bottleneck(low)
            self.last_bottleneck_hw = (inner.shape[2], inner.shape[3])
        low_out = self.up_blocks[level](inner)
        return T.add(up, T.upsample_nearest2x(low_out))


class LinkBlock(Module):
    """Post-hourglass layers: residual block then 1x1 conv-BN-ReLU."""

    def __init__(self, f, rng, dtype=np.float32):
        super().__init__()
        self.res = ResidualBlock(f, f, rng, dtype)
        self.conv = Conv2d(f, f, 1, rng, dtype=dtype)
        self.bn = BatchNorm2d(f, dtype)

    def forward(self, x):
        return T.relu(self.bn(self.conv(self.res(x))))


class StackedHourglass(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        f = config.feature_width
        half = f // 2

        self.stem_conv = Conv2d(3, half, 7, rng, stride=2, padding=3, dtype=dtype)
        self.stem_bn = BatchNorm2d(half, dtype)
        self.stem_res1 = ResidualBlock(half, half, rng, dtype)
        self.stem_res2 = ResidualBlock(half, f, rng, dtype)

        n = config.num_stages
        self.hourglasses = ModuleList(
            [Hourglass(f, rng, config.halvings_per_hourglass, dtype) for _ in range(n)]
        )
        self.links = ModuleList([LinkBlock(f, rng, dtype) for _ in range(n)])
        self.out_convs = ModuleList([Conv2d(f, 1, 1, rng, dtype=dtype) for _ in range(n)])
        self.feature_remaps = ModuleList([Conv2d(f, f, 1, rng, dtype=dtype) for _ in range(n - 1)])
        self.output_remaps = ModuleList([Conv2d(1, f, 1, rng, dtype=dtype) for _ in range(n - 1)])

    def forward(self, rgb) -> StageOutputs:
        """``rgb`` is (b, 3, H, W) with values scaled to [0, 1]."""
        cfg = self.config
        if rgb.data.ndim != 4 or rgb.shape[1] != 3:
            raise ShapeError(f"expected (b, 3, h, w) input, got {tuple(rgb.shape)} (axis 1)")
        if (rgb.shape[2], rgb.shape[3]) != cfg.input_resolution:
            raise ShapeError(
                f"input resolution {(rgb.shape[2], rgb.shape[3])} != configured "
                f"{cfg.input_resolution} (axes 2, 3)"
            )

        x = T.relu(self.stem_bn(self.stem_conv(rgb)))
        x = self.stem_res1(x)
        x = T.max_pool2d(x)
        x = self.stem_res2(x)

        outputs = []
        for s in range(cfg.num_stages):
            hg = self.hourglasses[s](x)
            link = self.links[s](hg)
            out = self.out_convs[s](link)
            outputs.append(out)
            if s + 1 < cfg.num_stages:
                x = T.add(T.add(x, self.feature_remaps[s](link)), self.output_remaps[s](out))
        return StageOutputs(outputs, cfg.mask_stages)

    @property
    def bottleneck_reports(self) -> list[tuple[int, int]]:
        return [hg.last_bottleneck_hw for hg in self.hourglasses]


def count_parameters(model: Module) -> int:
    return sum(p.data.size for p in model.parameters())

"""Staged convolutional feature extractor with a fixed stride/dilation plan.

Five stages produce a pyramid at cumulative strides (2, 4, 8, 8, 8): the
first three stages downsample with stride-2 convolutions, the last two
keep stride 1 and widen their receptive field with dilations 2 and 4, so
the deepest features stay at an output stride of 8.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import functional as F
from .layers import BatchNorm2d, Conv2d, Module, ModuleList
from .tensor import ShapeError, Tensor, add

STAGE_STRIDES = (2, 2, 2, 1, 1)
CUMULATIVE_STRIDES = (2, 4, 8, 8, 8)
STAGE_DILATIONS = (1, 1, 1, 2, 4)


@dataclass
class BackboneConfig:
    stage_channels: tuple = (8, 16, 32, 32, 32)
    blocks_per_stage: int = 1
    input_channels: int = 3

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 5 or any(c <= 0 for c in self.stage_channels):
            raise ValueError(f"stage_channels must be five positive ints, got {self.stage_channels}")
        if self.blocks_per_stage <= 0 or self.input_channels <= 0:
            raise ValueError("blocks_per_stage and input_channels must be positive")


@dataclass
class FeaturePyramid:
    """The five stage outputs with their stride/dilation/channel bookkeeping."""
    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Tensor
    strides: tuple = CUMULATIVE_STRIDES
    dilations: tuple = STAGE_DILATIONS
    channels: tuple = field(default=())

    def levels(self):
        return (self.f1, self.f2, self.f3, self.f4, self.f5)


class ResidualBlock(Module):
    """conv3x3 -> bn, added to a skip (1x1 projection when shape changes), relu."""

    def __init__(self, in_channels, out_channels, rng, dtype, stride=1, dilation=1):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, rng, dtype,
                           stride=stride, dilation=dilation, padding=dilation, bias=False)
        self.bn = BatchNorm2d(out_channels, dtype)
        if in_channels != out_channels or stride != 1:
            self.proj = Conv2d(in_channels, out_channels, 1, rng, dtype,
                               stride=stride, bias=False)
        else:
            self.proj = None

    def forward(self, x):
        main = self.bn(self.conv(x))
        skip = self.proj(x) if self.proj is not None else x
        return F.relu(add(main, skip))


class Backbone(Module):
    def __init__(self, config: BackboneConfig, rng, dtype, dilations=STAGE_DILATIONS):
        super().__init__()
        self.config = config
        self.dilations = tuple(dilations)
        stages = []
        in_ch = config.input_channels
        for out_ch, stride, dil in zip(config.stage_channels, STAGE_STRIDES, self.dilations):
            blocks = [ResidualBlock(in_ch, out_ch, rng, dtype, stride=stride, dilation=dil)]
            for _ in range(config.blocks_per_stage - 1):
                blocks.append(ResidualBlock(out_ch, out_ch, rng, dtype, dilation=dil))
            stages.append(ModuleList(blocks))
            in_ch = out_ch
        self.stages = ModuleList(stages)

    def forward(self, image) -> FeaturePyramid:
        if image.data.ndim != 4:
            raise ShapeError(f"backbone expects a rank-4 image batch, got {image.data.shape}")
        h, w = image.data.shape[2:]
        if h % 8 or w % 8:
            raise ShapeError(f"backbone input dims must be divisible by 8, got {h}x{w}")
        feats = []
        x = image
        for stage in self.stages:
            for block in stage:
                x = block(x)
            feats.append(x)
        return FeaturePyramid(*feats, strides=CUMULATIVE_STRIDES,
                              dilations=self.dilations,
                              channels=self.config.stage_channels)

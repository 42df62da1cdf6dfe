"""Coarse-segmentation stream: multi-rate context module plus pixel classifier."""

from __future__ import annotations

from . import functional as F
from .layers import BatchNorm2d, Conv2d, ConvBnRelu, Module, ModuleList
from .tensor import concat_channels


class Aspp(Module):
    """Parallel dilated branches plus an optional image-pooling branch.

    The rate-1 branch is a 1x1 conv block; every other rate r is a 3x3
    conv with dilation r.  Branch outputs are concatenated and projected
    back to ``out_channels`` regardless of the branch count.
    """

    def __init__(self, in_channels, rng, dtype, rates=(1, 2, 4), out_channels=32,
                 pooling=True):
        super().__init__()
        if not rates:
            raise ValueError("Aspp needs at least one dilation rate")
        branches = []
        for rate in rates:
            if rate == 1:
                branches.append(ConvBnRelu(in_channels, out_channels, 1, rng, dtype))
            else:
                branches.append(ConvBnRelu(in_channels, out_channels, 3, rng, dtype,
                                           dilation=rate, padding=rate))
        self.branches = ModuleList(branches)
        self.pooling = pooling
        if pooling:
            self.pool_block = ConvBnRelu(in_channels, out_channels, 1, rng, dtype)
        self.project = ConvBnRelu(
            out_channels * (len(branches) + (1 if pooling else 0)),
            out_channels, 1, rng, dtype)

    def forward(self, features):
        h, w = features.data.shape[2:]
        outs = [branch(features) for branch in self.branches]
        if self.pooling:
            pooled = self.pool_block(F.global_avg_pool(features))
            outs.append(F.resize_bilinear(pooled, h, w))
        merged = outs[0]
        for branch_out in outs[1:]:
            merged = concat_channels(merged, branch_out)
        return self.project(merged)


class SegHead(Module):
    """Pixel classifier emitting one score map per class at full resolution.

    With the decoder enabled, the context features are upsampled to the
    second pyramid level and refined against a projected low-level skip
    before classification (the heavier of the two baseline layouts).
    """

    def __init__(self, context_channels, lowlevel_channels, num_classes, rng, dtype,
                 use_decoder=False, skip_channels=8, refine_channels=32):
        super().__init__()
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        self.use_decoder = use_decoder
        if use_decoder:
            self.skip_proj = ConvBnRelu(lowlevel_channels, skip_channels, 1, rng, dtype)
            self.refine = ConvBnRelu(context_channels + skip_channels, refine_channels,
                                     3, rng, dtype, padding=1)
            self.classifier = Conv2d(refine_channels, num_classes, 1, rng, dtype)
        else:
            self.classifier = Conv2d(context_channels, num_classes, 1, rng, dtype)

    def forward(self, context, pyramid, out_h, out_w):
        if self.use_decoder:
            low = self.skip_proj(pyramid.f2)
            up = F.resize_bilinear(context, *low.data.shape[2:])
            x = self.refine(concat_channels(up, low))
            logits = self.classifier(x)
        else:
            logits = self.classifier(context)
        return F.resize_bilinear(logits, out_h, out_w)

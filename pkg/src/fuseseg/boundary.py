"""Boundary stream: gated side-output cascade and per-class boundary scoring.

The cascade walks the pyramid levels f1 -> f3 -> f4 -> f5.  At each step a
local attention gate blends the backbone features with the carried
cascade state and emits a single-channel side map; the residual output of
the gate becomes the carry for the next step.  The deepest features also
produce a local-gradient map whose upsampled per-class slices are fused
with the side maps into edge features, re-weighted by an adaptation of
the same gradient map, and classified into per-class boundary scores.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import functional as F
from .layers import BatchNorm2d, Conv2d, ConvTranspose2d, Module, ModuleList
from .tensor import (ShapeError, Tensor, add, concat_channels, mul,
                     repeat_channels, scalar_add, slice_channels, sub)


def local_gradient(features):
    """sigmoid(x - local 3x3 max of x); values always in (0, 0.5].

    The pooling window includes the pixel itself, so the difference is
    never positive and the sigmoid never exceeds 0.5.
    """
    return F.sigmoid(sub(features, F.maxpool2d(features, 3, 1, 1)))


@dataclass
class BoundaryFeatures:
    """Three single-channel side maps at full image resolution."""
    s1: Tensor
    s2: Tensor
    s3: Tensor

    def maps(self):
        return (self.s1, self.s2, self.s3)


class BoundaryGate(Module):
    """Local attention gate followed by a residual block and a 1-channel head.

    The attention map is a sigmoid over a 1x1 conv of the concatenated
    inputs; the gate scales the backbone features by (attention + k),
    where k > 0 keeps a floor on the signal so fully closed attention
    still lets a scaled copy through.
    """

    def __init__(self, main_channels, lateral_channels, gate_channels, k, rng, dtype):
        super().__init__()
        self.k = float(k)
        self.attn = Conv2d(main_channels + lateral_channels, 1, 1, rng, dtype)
        self.proj = Conv2d(main_channels, gate_channels, 1, rng, dtype)
        self.res_conv1 = Conv2d(gate_channels, gate_channels, 3, rng, dtype,
                                padding=1, bias=False)
        self.res_bn1 = BatchNorm2d(gate_channels, dtype)
        self.res_conv2 = Conv2d(gate_channels, gate_channels, 3, rng, dtype,
                                padding=1, bias=False)
        self.res_bn2 = BatchNorm2d(gate_channels, dtype)
        self.head = Conv2d(gate_channels, 1, 1, rng, dtype)

    def attention(self, main, lateral):
        if main.data.shape[2:] != lateral.data.shape[2:]:
            raise ShapeError(f"boundary gate: lateral features {lateral.data.shape} were not "
                             f"resized to the main features {main.data.shape}")
        return F.sigmoid(self.attn(concat_channels(main, lateral)))

    def forward(self, main, lateral):
        alpha = self.attention(main, lateral)
        gated = self.proj(mul(main, scalar_add(alpha, self.k)))
        r = F.relu(self.res_bn1(self.res_conv1(gated)))
        r = self.res_bn2(self.res_conv2(r))
        carry = F.relu(add(r, gated))
        return self.head(carry), carry


class BoundaryCascade(Module):
    def __init__(self, pyramid_channels, gate_channels, k, rng, dtype):
        super().__init__()
        c1, _, c3, c4, c5 = pyramid_channels
        self.entry = Conv2d(c1, gate_channels, 1, rng, dtype)
        self.gates = ModuleList([
            BoundaryGate(c3, gate_channels, gate_channels, k, rng, dtype),
            BoundaryGate(c4, gate_channels, gate_channels, k, rng, dtype),
            BoundaryGate(c5, gate_channels, gate_channels, k, rng, dtype),
        ])

    def forward(self, pyramid, out_h, out_w) -> BoundaryFeatures:
        carry = self.entry(pyramid.f1)
        sides = []
        for gate, feat in zip(self.gates, (pyramid.f3, pyramid.f4, pyramid.f5)):
            lateral = F.resize_bilinear(carry, *feat.data.shape[2:])
            score, carry = gate(feat, lateral)
            sides.append(F.resize_bilinear(score, out_h, out_w))
        return BoundaryFeatures(*sides)


class EdgeFusion(Module):
    """Upsample the local-gradient map x8 and fuse per-class slices with sides.

    The two transposed convolutions (strides 2 then 4, kernels twice the
    stride, padding half the stride) avoid checkerboard dead zones; the
    second emits exactly one channel per class.  Each class then gets an
    independent 4->4 pointwise mix of (its slice, s1, s2, s3), stacked
    class-major: class k occupies channels 4k..4k+3.
    """

    def __init__(self, in_channels, num_classes, rng, dtype, mid_channels=8):
        super().__init__()
        self.num_classes = num_classes
        self.up1 = ConvTranspose2d(in_channels, mid_channels, 4, rng, dtype,
                                   stride=2, padding=1)
        self.up2 = ConvTranspose2d(mid_channels, num_classes, 8, rng, dtype,
                                   stride=4, padding=2)
        self.mixers = ModuleList([Conv2d(4, 4, 1, rng, dtype)
                                  for _ in range(num_classes)])

    def upsample(self, grad_map):
        return self.up2(self.up1(grad_map))

    def fuse(self, upsampled, sides: BoundaryFeatures):
        groups = []
        for k in range(self.num_classes):
            chunk = slice_channels(upsampled, k, k + 1)
            for side in sides.maps():
                chunk = concat_channels(chunk, side)
            groups.append(self.mixers[k](chunk))
        edges = groups[0]
        for g in groups[1:]:
            edges = concat_channels(edges, g)
        return edges

    def forward(self, grad_map, sides, out_h, out_w):
        upsampled = self.upsample(grad_map)
        if upsampled.data.shape[2:] != (out_h, out_w):
            raise ShapeError(f"edge fusion: upsampled map {upsampled.data.shape} does not reach "
                             f"full resolution ({out_h}, {out_w}); check the stride/padding plan")
        return self.fuse(upsampled, sides), upsampled


class BoundaryClassifier(Module):
    """Adaptation gate over the edge features, then a per-class 1x1 classifier.

    Two 1x1 conv-bn-relu blocks adapt the upsampled gradient map to one
    channel per class; each channel is replicated over its class's group
    of four edge channels and applied multiplicatively before the final
    4L -> L classification.
    """

    def __init__(self, num_classes, rng, dtype):
        super().__init__()
        self.num_classes = num_classes
        self.adapt1 = Conv2d(num_classes, num_classes, 1, rng, dtype, bias=False)
        self.adapt_bn1 = BatchNorm2d(num_classes, dtype)
        self.adapt2 = Conv2d(num_classes, num_classes, 1, rng, dtype, bias=False)
        self.adapt_bn2 = BatchNorm2d(num_classes, dtype)
        self.classify = Conv2d(4 * num_classes, num_classes, 1, rng, dtype)

    def adapted(self, upsampled):
        a = F.relu(self.adapt_bn1(self.adapt1(upsampled)))
        return F.relu(self.adapt_bn2(self.adapt2(a)))

    def forward(self, upsampled, edge_features):
        if edge_features.data.shape[1] != 4 * self.num_classes:
            raise ShapeError(f"boundary classifier: edge features have "
                             f"{edge_features.data.shape[1]} channels, expected {4 * self.num_classes}")
        gate = repeat_channels(self.adapted(upsampled), 4)
        return self.classify(mul(gate, edge_features))

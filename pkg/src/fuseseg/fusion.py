"""Semantic fusion gate: complementary attention over the two streams.

The gate derives a refined segmentation and an attention map from the
coarse scores, then blends refined scores and boundary scores with the
attention and its complement:

    final = A * refined + (1 - A) * boundary

so the gradient reaching the boundary stream is scaled by exactly
(1 - A), which is what splits the error signal between the streams.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import functional as F
from .layers import BatchNorm2d, Conv2d, Module
from .tensor import ShapeError, Tensor, add, mul, scalar_add, scalar_mul

ATTENTION_KINDS = ("sigmoid", "softmax")


@dataclass
class FusionOutput:
    final: Tensor
    attention: Tensor
    refined: Tensor


class FusionGate(Module):
    """Two conv sets over the coarse scores: one refines, one gates.

    ``attention="sigmoid"`` (default) makes A and 1-A a valid elementwise
    complement; ``"softmax"`` normalizes the gate across classes instead.
    """

    def __init__(self, num_classes, rng, dtype, attention="sigmoid"):
        super().__init__()
        if attention not in ATTENTION_KINDS:
            raise ValueError(f"unknown fusion attention {attention!r}")
        self.attention_kind = attention
        self.refine_conv = Conv2d(num_classes, num_classes, 3, rng, dtype,
                                  padding=1, bias=False)
        self.refine_bn = BatchNorm2d(num_classes, dtype)
        self.refine_out = Conv2d(num_classes, num_classes, 1, rng, dtype)
        self.attn_conv = Conv2d(num_classes, num_classes, 3, rng, dtype,
                                padding=1, bias=False)
        self.attn_bn = BatchNorm2d(num_classes, dtype)
        self.attn_out = Conv2d(num_classes, num_classes, 1, rng, dtype)

    def forward(self, coarse, boundary) -> FusionOutput:
        if coarse.data.shape != boundary.data.shape:
            raise ShapeError(f"fusion gate: coarse scores {coarse.data.shape} and boundary "
                             f"scores {boundary.data.shape} must match")
        refined = self.refine_out(F.relu(self.refine_bn(self.refine_conv(coarse))))
        logits = self.attn_out(F.relu(self.attn_bn(self.attn_conv(coarse))))
        if self.attention_kind == "sigmoid":
            attn = F.sigmoid(logits)
        else:
            attn = F.softmax_channel(logits)
        complement = scalar_add(scalar_mul(attn, -1.0), 1.0)
        final = add(mul(attn, refined), mul(complement, boundary))
        return FusionOutput(final=final, attention=attn, refined=refined)

"""Full network assembly: both streams and the fusion gate, per run config.

Three layouts share the same backbone and coarse stream:

* ``baseline``: coarse scores are the final output.
* ``boundary``: boundary scores are added directly onto the coarse scores
  (no gate) -- the ablation arm showing why the gate matters.
* ``full``: the fusion gate blends refined coarse scores with boundary
  scores through complementary attention.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .backbone import Backbone, BackboneConfig, FeaturePyramid
from .boundary import (BoundaryCascade, BoundaryClassifier, BoundaryFeatures,
                       EdgeFusion, local_gradient)
from .config import RunConfig, child_rng
from .context import Aspp, SegHead
from .fusion import FusionGate
from .layers import Module
from .tensor import Tensor, add, dtype_for


@dataclass
class ModelOutput:
    final: Tensor
    coarse: Tensor
    pyramid: FeaturePyramid
    boundary: Optional[Tensor] = None
    sides: Optional[BoundaryFeatures] = None
    edge_features: Optional[Tensor] = None
    upsampled_gradient: Optional[Tensor] = None
    attention: Optional[Tensor] = None
    refined: Optional[Tensor] = None


class SegmentationNet(Module):
    def __init__(self, cfg: RunConfig, rng, dtype):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(
            BackboneConfig(stage_channels=cfg.stage_channels,
                           blocks_per_stage=cfg.blocks_per_stage,
                           input_channels=cfg.input_channels),
            rng, dtype)
        f5_channels = cfg.stage_channels[4]
        self.context = Aspp(f5_channels, rng, dtype, rates=cfg.aspp_rates,
                            out_channels=cfg.aspp_channels, pooling=cfg.aspp_pooling)
        self.head = SegHead(cfg.aspp_channels, cfg.stage_channels[1],
                            cfg.num_classes, rng, dtype, use_decoder=cfg.use_decoder)
        if cfg.model_mode != "baseline":
            self.cascade = BoundaryCascade(cfg.stage_channels, cfg.gate_channels,
                                           cfg.gate_k, rng, dtype)
            self.edge_fusion = EdgeFusion(f5_channels, cfg.num_classes, rng, dtype,
                                          mid_channels=cfg.edge_mid_channels)
            self.boundary_head = BoundaryClassifier(cfg.num_classes, rng, dtype)
        if cfg.model_mode == "full":
            self.gate = FusionGate(cfg.num_classes, rng, dtype,
                                   attention=cfg.fusion_attention)

    def forward(self, image) -> ModelOutput:
        h, w = image.data.shape[2:]
        pyramid = self.backbone(image)
        coarse = self.head(self.context(pyramid.f5), pyramid, h, w)
        coarse.name = "coarse_scores"
        if self.cfg.model_mode == "baseline":
            return ModelOutput(final=coarse, coarse=coarse, pyramid=pyramid)
        sides = self.cascade(pyramid, h, w)
        grad_map = local_gradient(pyramid.f5)
        edges, upsampled = self.edge_fusion(grad_map, sides, h, w)
        boundary = self.boundary_head(upsampled, edges)
        boundary.name = "boundary_scores"
        if self.cfg.model_mode == "boundary":
            final = add(coarse, boundary)
            return ModelOutput(final=final, coarse=coarse, pyramid=pyramid,
                               boundary=boundary, sides=sides, edge_features=edges,
                               upsampled_gradient=upsampled)
        fused = self.gate(coarse, boundary)
        fused.final.name = "final_scores"
        return ModelOutput(final=fused.final, coarse=coarse, pyramid=pyramid,
                           boundary=boundary, sides=sides, edge_features=edges,
                           upsampled_gradient=upsampled, attention=fused.attention,
                           refined=fused.refined)


def build_model(cfg: RunConfig, dtype=None) -> SegmentationNet:
    """Construct a model with weights drawn from the config's "init" stream."""
    if dtype is None:
        dtype = dtype_for(cfg.precision)
    return SegmentationNet(cfg, child_rng(cfg.seed, "init"), dtype)

"""The detector network: backbone, candidate generation and box head wired together."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .boxgeom import nms
from .config import ModelConfig
from .core import Box3D, Detection, Instance, PointCloud, Scene
from .head import (
    Assignment,
    CandidateSet,
    HeadOutput,
    TargetBatch,
    assign_targets,
    cg_layer,
    decode_boxes,
    head_width,
)
from .loss import LossBreakdown, LossConfig, total_loss
from .nn import (
    Backbone,
    BackboneOutput,
    BackboneSpec,
    MlpSpec,
    ParamStore,
    SaLayerSpec,
    SelectionCache,
    init_mlp,
    mlp_forward,
)
from .sampling import Origin, SamplingConfig, Strategy


@dataclass
class Forward:
    backbone: BackboneOutput
    candidates: CandidateSet
    output: HeadOutput


def fold_heading(yaw: float) -> float:
    """Fold a yaw onto [-pi/2, pi/2); a box and its half-turn are the same solid."""
    out = math.fmod(yaw + math.pi / 2, math.pi)
    if out < 0:
        out += math.pi
    out -= math.pi / 2
    return out if out < math.pi / 2 else out - math.pi


def fold_scene(scene: Scene) -> Scene:
    insts = tuple(
        Instance(Box3D(i.box.center, i.box.size, fold_heading(i.box.yaw)), i.class_id, i.interior_point_indices)
        for i in scene.instances
    )
    return Scene(scene.cloud, insts, scene.id)


class SSDNet:
    """Parameters plus forward pass; holds no training state."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore()
        seeds = iter(np.random.SeedSequence(seed).generate_state(len(config.layers) + 3))
        in_c = 1 if config.use_reflectance else 0
        layers = []
        for lc in config.layers:
            mlp = MlpSpec((3 + in_c, *lc.mlp), int(next(seeds)), last_activation=True)
            layers.append(SaLayerSpec(SamplingConfig(lc.n_out, lc.lam, Strategy(lc.strategy)), lc.radius, lc.max_neighbors, mlp))
            in_c = lc.mlp[-1]
        self.backbone_spec = BackboneSpec(tuple(layers))
        self.backbone = Backbone(self.backbone_spec, self.params, config.use_reflectance)
        self.shift_spec = MlpSpec((in_c, *config.shift_mlp, 3), int(next(seeds)))
        self.shift_layers = init_mlp(self.params, "cg.shift", self.shift_spec)
        self.group_spec = MlpSpec((3 + in_c, *config.group_mlp), int(next(seeds)), last_activation=True)
        self.group_layers = init_mlp(self.params, "cg.group", self.group_spec)
        self.head_spec = MlpSpec((config.group_mlp[-1], *config.head_mlp, head_width(config.n_bins)), int(next(seeds)))
        self.head_layers = init_mlp(self.params, "head", self.head_spec)
        # start size regression at the prior so the corner term is sane from step one
        bias = self.head_layers[-1][1]
        bias.data[4:7] = np.asarray(config.size_prior, dtype=np.float64)
        last = self.backbone_spec.layers[-1].sampling.strategy
        self.center_origin = Origin.FROM_DFPS if last is Strategy.DFPS else Origin.FROM_FFPS

    def forward(self, cloud: PointCloud, cache: Optional[SelectionCache] = None) -> Forward:
        bb = self.backbone(cloud, cache)
        cands = cg_layer(
            bb.xyz,
            bb.features,
            bb.origin,
            self.shift_spec,
            self.shift_layers,
            self.config.cg_radius,
            self.config.cg_max_neighbors,
            self.group_spec,
            self.group_layers,
            self.center_origin,
            cache,
        )
        raw = mlp_forward(self.head_spec, self.head_layers, cands.features)
        return Forward(bb, cands, HeadOutput(raw, self.config.n_bins))

    def targets(self, fwd: Forward, scene: Scene, assignment: Assignment = Assignment.CENTERNESS) -> TargetBatch:
        if self.config.fold_heading:
            scene = fold_scene(scene)
        c = fwd.candidates
        return assign_targets(c.candidate_xyz, c.origin_xyz, scene, self.config.n_bins, assignment)

    def loss(self, scene: Scene, loss_config: LossConfig, assignment=Assignment.CENTERNESS, cache=None) -> Tuple[LossBreakdown, Forward]:
        fwd = self.forward(scene.cloud, cache)
        if cache is not None:
            tg = cache.get("targets", lambda: self.targets(fwd, scene, assignment))
        else:
            tg = self.targets(fwd, scene, assignment)
        return total_loss(fwd.output, fwd.candidates, tg, loss_config), fwd

    def detect(
        self,
        cloud: PointCloud,
        nms_threshold: float = 0.1,
        score_threshold: float = 0.05,
        max_out: int = 50,
        class_id: int = 0,
    ) -> List[Detection]:
        return self.detections_from(self.forward(cloud), nms_threshold, score_threshold, max_out, class_id)

    def detections_from(self, fwd: Forward, nms_threshold=0.1, score_threshold=0.05, max_out=50, class_id=0) -> List[Detection]:
        keep = fwd.candidates.valid
        dets = decode_boxes(fwd.candidates.candidate_xyz[keep], fwd.output.raw.data[keep], self.config.n_bins, class_id)
        dets = [d for d in dets if d.score >= score_threshold]
        return nms(dets, nms_threshold, max_out)

"""Glue shared by the CLI and the acceptance suite: datasets, evaluation, ablations."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import DataConfig, RunConfig
from .core import Detection, Scene
from .data import AlignMode, SceneGenSpec, align_scene, generate_scenes
from .metrics import EvalReport, evaluate
from .model import SSDNet
from .nn import load_checkpoint
from .sampling import points_recall
from .training import train


def scene_spec(data: DataConfig, seed: int) -> SceneGenSpec:
    return SceneGenSpec(
        seed=seed,
        instances=tuple(data.instances),
        size_mean=tuple(data.size_mean),
        size_jitter=data.size_jitter,
        yaw_range=tuple(data.yaw_range),
        points_per_instance=tuple(data.points_per_instance),
        remote_fraction=data.remote_fraction,
        remote_points=tuple(data.remote_points),
        background_points=data.background_points,
        ground_fraction=data.ground_fraction,
        extent=tuple(data.extent),
        clearance=data.clearance,
    )


def make_splits(cfg: RunConfig, n_train: Optional[int] = None, n_val: Optional[int] = None, seed: int = 0) -> Dict[str, List[Scene]]:
    """Train and val scenes; the split seeds are offset by ``seed``."""
    d = cfg.data
    n_train = d.n_train if n_train is None else n_train
    n_val = d.n_val if n_val is None else n_val
    return {
        "train": generate_scenes(scene_spec(d, d.train_seed + seed), n_train, "train"),
        "val": generate_scenes(scene_spec(d, d.val_seed + seed), n_val, "val"),
    }


def eval_inputs(cfg: RunConfig, scenes: Sequence[Scene]) -> List[Scene]:
    """Val scenes aligned to the input budget with a fixed per-scene seed."""
    d = cfg.data
    return [align_scene(s, d.budget, AlignMode(d.align_mode), np.random.default_rng(i), d.voxel_size) for i, s in enumerate(scenes)]


def detect_and_recall(model: SSDNet, cfg: RunConfig, scenes: Sequence[Scene]) -> Tuple[List[List[Detection]], Optional[float]]:
    """Detections per scene and the points recall of the last SA layer's sample set."""
    ev = cfg.eval
    dets, kept = [], []
    for s in scenes:
        fwd = model.forward(s.cloud)
        idx = np.arange(len(s.cloud))
        for layer in fwd.backbone.layers:
            idx = idx[layer.sample.indices]
        kept.append(idx)
        dets.append(model.detections_from(fwd, ev.nms_threshold, ev.score_threshold, ev.max_out))
    recall = points_recall(scenes, kept) if any(s.instances for s in scenes) else None
    return dets, recall


def class_names(cfg: RunConfig) -> Dict[int, str]:
    return {int(k): v for k, v in cfg.eval.class_names.items()}


def evaluate_model(model: SSDNet, cfg: RunConfig, scenes: Sequence[Scene], aligned: bool = False) -> EvalReport:
    inputs = list(scenes) if aligned else eval_inputs(cfg, scenes)
    dets, recall = detect_and_recall(model, cfg, inputs)
    ev = cfg.eval
    period = np.pi if cfg.model.fold_heading else 2 * np.pi
    return evaluate(dets, inputs, ev.iou_thresholds, class_names(cfg), ev.primary_threshold, recall, yaw_period=period)


def checkpoint_meta(cfg: RunConfig, seed: int, steps: int, assignment: str) -> Dict[str, str]:
    return {
        "model_config": json.dumps(copy.deepcopy(cfg.resolved()["model"]), sort_keys=True),
        "seed": str(seed),
        "steps": str(steps),
        "assignment": assignment,
    }


def model_from_checkpoint(path, cfg: Optional[RunConfig] = None) -> SSDNet:
    """Rebuild a model; ``cfg`` (if given) must describe the same parameter shapes."""
    from .config import ModelConfig, from_dict

    state, meta = load_checkpoint(path)
    if cfg is not None:
        mcfg = cfg.model
    else:
        mcfg = from_dict(ModelConfig, json.loads(meta["model_config"]), "checkpoint.model")
    model = SSDNet(mcfg, int(meta.get("seed", 0)))
    model.params.load_state_dict(state)
    return model


@dataclass
class AblationRow:
    strategy: str
    assignment: str
    points_recall: float
    ap: Dict[str, float]

    def to_dict(self) -> Dict[str, object]:
        return {"strategy": self.strategy, "assignment": self.assignment, "points_recall": self.points_recall, **self.ap}


def ablation_config(cfg: RunConfig, strategy: str) -> RunConfig:
    """Same network with the last SA layer sampling by ``strategy``."""
    out = copy.deepcopy(cfg)
    out.model.layers[-1].strategy = strategy
    return out


def ablation_cells(cfg: RunConfig) -> List[Tuple[str, str]]:
    """Strategy sweep under center-ness, then assignment sweep under FUSION (no duplicate cell)."""
    cells: List[Tuple[str, str]] = []
    for s in cfg.ablation.strategies:
        cells.append((s, "centerness"))
    for a in cfg.ablation.assignments:
        if ("FUSION", a) not in cells:
            cells.append(("FUSION", a))
    return cells


def run_ablation(cfg: RunConfig, train_scenes: Sequence[Scene], val_scenes: Sequence[Scene], seed: int = 0, steps: Optional[int] = None, log=None) -> List[AblationRow]:
    steps = cfg.ablation.steps if steps is None else steps
    inputs = eval_inputs(cfg, val_scenes)
    rows = []
    for strategy, assignment in ablation_cells(cfg):
        c = ablation_config(cfg, strategy)
        result = train(c, train_scenes, seed=seed, steps=steps, assignment=assignment)
        report = evaluate_model(result.model, c, inputs, aligned=True)
        ap = next(iter(report.ap.values())) if report.ap else {}
        rows.append(AblationRow(strategy, assignment, report.points_recall, dict(ap)))
        if log is not None:
            log(rows[-1])
    return rows

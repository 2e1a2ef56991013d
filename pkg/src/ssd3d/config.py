"""Declarative run configuration loaded from versioned JSON files.

Unknown keys are rejected at every nesting level, and ``resolved()`` emits the
complete configuration with every default spelled out.
"""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class SaLayerConfig:
    n_out: int
    strategy: str = "DFPS"
    lam: float = 1.0
    radius: float = 1.0
    max_neighbors: int = 16
    mlp: List[int] = field(default_factory=lambda: [16, 32])


def _default_layers() -> List[SaLayerConfig]:
    return [
        SaLayerConfig(n_out=512, strategy="DFPS", radius=0.8, max_neighbors=16, mlp=[16, 32]),
        SaLayerConfig(n_out=256, strategy="FUSION", lam=0.1, radius=1.6, max_neighbors=16, mlp=[32, 64]),
    ]


@dataclass
class ModelConfig:
    layers: List[SaLayerConfig] = field(default_factory=_default_layers)
    use_reflectance: bool = False
    cg_radius: float = 2.0
    cg_max_neighbors: int = 16
    shift_mlp: List[int] = field(default_factory=lambda: [32])
    group_mlp: List[int] = field(default_factory=lambda: [64, 64])
    head_mlp: List[int] = field(default_factory=lambda: [64])
    n_bins: int = 12
    size_prior: List[float] = field(default_factory=lambda: [3.9, 1.6, 1.56])
    fold_heading: bool = True


@dataclass
class DataConfig:
    n_train: int = 64
    n_val: int = 16
    train_seed: int = 100
    val_seed: int = 200
    instances: List[int] = field(default_factory=lambda: [2, 5])
    size_mean: List[float] = field(default_factory=lambda: [3.9, 1.6, 1.56])
    size_jitter: float = 0.1
    yaw_range: List[float] = field(default_factory=lambda: [-math.pi, math.pi])
    points_per_instance: List[int] = field(default_factory=lambda: [200, 400])
    remote_fraction: float = 0.0
    remote_points: List[int] = field(default_factory=lambda: [3, 10])
    background_points: int = 1500
    ground_fraction: float = 0.7
    extent: List[float] = field(default_factory=lambda: [40.0, 40.0])
    clearance: float = 1.5
    budget: int = 1024
    align_mode: str = "RANDOM"
    voxel_size: float = 0.1


@dataclass
class AugmentConfig:
    enabled: bool = True
    box_rotation: List[float] = field(default_factory=lambda: [-math.pi / 4, math.pi / 4])
    box_translation: List[List[float]] = field(default_factory=lambda: [[-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5]])
    flip_prob: float = 0.5
    global_rotation: List[float] = field(default_factory=lambda: [-math.pi / 4, math.pi / 4])
    global_scale: List[float] = field(default_factory=lambda: [0.95, 1.05])
    mixup: int = 0


@dataclass
class LossSection:
    lambda1: float = 1.0
    lambda2: float = 1.0
    smooth_l1_beta: float = 1.0


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 0.002
    decay_at: float = 0.8
    decay_factor: float = 0.1
    assignment: str = "centerness"


@dataclass
class EvalConfig:
    iou_thresholds: List[float] = field(default_factory=lambda: [0.5, 0.7])
    primary_threshold: float = 0.7
    nms_threshold: float = 0.2
    score_threshold: float = 0.05
    max_out: int = 50
    class_names: Dict[str, str] = field(default_factory=lambda: {"0": "Car"})


@dataclass
class SampleConfig:
    scenes: int = 200
    budgets: List[int] = field(default_factory=lambda: [512, 1024, 4096])
    lambdas: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0])
    strategies: List[str] = field(default_factory=lambda: ["DFPS", "FFPS"])
    bench_seed: int = 2020
    raw_feature_fallback: bool = True


@dataclass
class AblationConfig:
    strategies: List[str] = field(default_factory=lambda: ["DFPS", "FFPS", "FUSION"])
    assignments: List[str] = field(default_factory=lambda: ["iou", "mask", "centerness"])
    steps: int = 2000


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def resolved(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.resolved(), indent=2, sort_keys=False)


def _convert(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return from_dict(tp, value, path)
    if origin in (list, List):
        (inner,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        return [_convert(inner, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin in (dict, Dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return {str(k): v for k, v in value.items()}
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def from_dict(cls, data: Dict[str, Any], path: str = "config"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{path}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    data: Dict[str, Any] = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    if overrides:
        data = _merge(data, overrides)
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")
    return from_dict(RunConfig, data)


def _merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out

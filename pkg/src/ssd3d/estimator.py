"""scikit-learn style wrappers: a trainable detector and a fusion-sampling transformer."""

from __future__ import annotations

import copy
from typing import List, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .core import Detection, PointCloud, Scene, validate_scene
from .data import AlignMode, align_scene
from .metrics import average_precision
from .sampling import SamplingConfig, Strategy, fps

CloudLike = Union[PointCloud, np.ndarray]


def check_cloud(x: CloudLike) -> PointCloud:
    """Accept a PointCloud or an (N, 3) / (N, 4) array of x, y, z[, reflectance]."""
    if isinstance(x, PointCloud):
        return x
    if isinstance(x, Scene):
        return x.cloud
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] not in (3, 4):
        raise ValueError(f"expected an (N, 3) or (N, 4) array, got shape {arr.shape}")
    if len(arr) == 0:
        raise ValueError("point cloud is empty")
    return PointCloud(arr[:, :3], arr[:, 3] if arr.shape[1] == 4 else None)


def check_clouds(xs) -> List[PointCloud]:
    if isinstance(xs, (PointCloud, Scene)) or (isinstance(xs, np.ndarray) and xs.ndim == 2):
        xs = [xs]
    return [check_cloud(x) for x in xs]


def check_scenes(scenes, require_instances: bool = False) -> List[Scene]:
    """A non-empty list of valid scenes."""
    if isinstance(scenes, Scene):
        scenes = [scenes]
    scenes = list(scenes)
    if not scenes:
        raise ValueError("need at least one scene")
    for s in scenes:
        if not isinstance(s, Scene):
            raise TypeError(f"expected Scene, got {type(s).__name__}")
        report = validate_scene(s)
        if report:
            raise ValueError(f"scene {s.id!r} is invalid: {list(report)[0]}")
    if require_instances and not any(s.instances for s in scenes):
        raise ValueError("scenes contain no ground-truth instances")
    return scenes


class SSD3DDetector(BaseEstimator):
    """Single-stage point-based detector.

    ``fit`` takes a list of scenes (ground truth included); ``predict`` takes point
    clouds (or scenes) and returns one detection list per input.
    """

    def __init__(self, config: Optional[RunConfig] = None, seed: int = 0, steps: Optional[int] = None, assignment: Optional[str] = None):
        self.config = config
        self.seed = seed
        self.steps = steps
        self.assignment = assignment

    def _cfg(self) -> RunConfig:
        return copy.deepcopy(self.config) if self.config is not None else RunConfig()

    def fit(self, scenes: Sequence[Scene], y=None) -> "SSD3DDetector":
        from .training import train

        scenes = check_scenes(scenes, require_instances=True)
        result = train(self._cfg(), scenes, seed=self.seed, steps=self.steps, assignment=self.assignment)
        self.model_ = result.model
        self.train_log_ = result.records
        return self

    def _prepare(self, x, i: int) -> PointCloud:
        cfg = self._cfg()
        cloud = check_cloud(x)
        if len(cloud) == cfg.data.budget:
            return cloud
        scene = align_scene(Scene(cloud), cfg.data.budget, AlignMode(cfg.data.align_mode), np.random.default_rng(i), cfg.data.voxel_size)
        return scene.cloud

    def predict(self, X) -> List[List[Detection]]:
        check_is_fitted(self, "model_")
        ev = self._cfg().eval
        out = []
        for i, cloud in enumerate(check_clouds(X)):
            out.append(self.model_.detect(self._prepare(cloud, i), ev.nms_threshold, ev.score_threshold, ev.max_out))
        return out

    def score(self, scenes, y=None) -> float:
        """Average precision at the configured primary IoU threshold."""
        scenes = check_scenes(scenes, require_instances=True)
        dets = self.predict([s.cloud for s in scenes])
        return average_precision(dets, [s.instances for s in scenes], self._cfg().eval.primary_threshold)


class FusionSampler(TransformerMixin, BaseEstimator):
    """Index sampler: ``transform`` maps each cloud to an array of ``n_out`` point indices."""

    def __init__(self, n_out: int = 512, lam: float = 1.0, strategy: str = "FUSION", start_index: int = 0):
        self.n_out = n_out
        self.lam = lam
        self.strategy = strategy
        self.start_index = start_index

    def _config(self) -> SamplingConfig:
        return SamplingConfig(self.n_out, self.lam, Strategy(self.strategy), self.start_index)

    def fit(self, X=None, y=None) -> "FusionSampler":
        self.config_ = self._config()
        return self

    def transform(self, X) -> np.ndarray:
        cfg = getattr(self, "config_", None) or self._config()
        clouds = [x if isinstance(x, PointCloud) else x.cloud if isinstance(x, Scene) else check_cloud(x) for x in _as_list(X)]
        return np.stack([fps(c, cfg).indices for c in clouds])

    def sample(self, cloud: CloudLike):
        """Full sampling result (indices plus per-index origin) for one cloud."""
        c = cloud.cloud if isinstance(cloud, Scene) else check_cloud(cloud)
        return fps(c, self._config())


def _as_list(X):
    if isinstance(X, (PointCloud, Scene)) or (isinstance(X, np.ndarray) and X.ndim == 2):
        return [X]
    return list(X)

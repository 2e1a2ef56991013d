"""Synthetic scenes, input alignment (random / voxel), augmentation and mix-up."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .boxgeom import bev_intersection_area, contains_points
from .core import Box3D, Instance, PointCloud, Scene, normalize_yaw

log = logging.getLogger(__name__)

DECIMALS = 6


class AlignMode(str, enum.Enum):
    RANDOM = "RANDOM"
    VOXEL = "VOXEL"


@dataclass(frozen=True)
class SceneGenSpec:
    seed: int = 0
    instances: Tuple[int, int] = (2, 5)
    size_mean: Tuple[float, float, float] = (3.9, 1.6, 1.56)
    size_jitter: float = 0.1
    yaw_range: Tuple[float, float] = (-math.pi, math.pi)
    points_per_instance: Tuple[int, int] = (60, 150)
    remote_fraction: float = 0.0
    remote_points: Tuple[int, int] = (3, 10)
    background_points: int = 1500
    ground_fraction: float = 0.7
    clutter_height: float = 3.0
    extent: Tuple[float, float] = (40.0, 40.0)
    interior_inset: float = 0.98
    clearance: float = 0.3
    max_retries: int = 200
    class_id: int = 0

    def __post_init__(self):
        if min(self.extent) <= 0 or self.clutter_height <= 0:
            raise ValueError("extents must be positive")
        lo, hi = self.instances
        if lo < 0 or hi < lo:
            raise ValueError("instance count range must be non-negative and ordered")
        plo, phi = self.points_per_instance
        if plo < 1 or phi < plo:
            raise ValueError("points_per_instance must be ordered and >= 1")
        rlo, rhi = self.remote_points
        if rlo < 1 or rhi < rlo:
            raise ValueError("remote_points must be ordered and >= 1")
        if self.background_points < 0:
            raise ValueError("background_points must be >= 0")
        if not 0.0 <= self.remote_fraction <= 1.0 or not 0.0 <= self.ground_fraction <= 1.0:
            raise ValueError("fractions must lie in [0, 1]")
        if not 0.0 < self.interior_inset <= 1.0:
            raise ValueError("interior_inset must lie in (0, 1]")


def _q(x):
    return np.round(np.asarray(x, dtype=np.float64), DECIMALS)


def _quantize_box(center, size, yaw) -> Box3D:
    yaw = float(_q(normalize_yaw(yaw)))
    if yaw < -math.pi:
        yaw = float(_q(yaw + 2 * math.pi))
    return Box3D(tuple(_q(center)), tuple(_q(size)), yaw)


def _local_to_world(box: Box3D, local: np.ndarray) -> np.ndarray:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = np.empty_like(local)
    out[:, 0] = c * local[:, 0] - s * local[:, 1]
    out[:, 1] = s * local[:, 0] + c * local[:, 1]
    out[:, 2] = local[:, 2]
    return out + np.asarray(box.center)


def _place_boxes(spec: SceneGenSpec, rng: np.random.Generator, n: int, remote: np.ndarray) -> List[Box3D]:
    boxes: List[Box3D] = []
    ex, ey = spec.extent
    for k in range(n):
        for _ in range(spec.max_retries):
            size = np.asarray(spec.size_mean) * (1.0 + spec.size_jitter * rng.uniform(-1, 1, 3))
            margin = 0.5 * math.hypot(size[0], size[1])
            if remote[k]:
                # remote instances sit in the outer ring of the extent
                r = rng.uniform(0.35, 0.5) * min(ex, ey) - margin
                phi = rng.uniform(-math.pi, math.pi)
                cx, cy = r * math.cos(phi), r * math.sin(phi)
            else:
                cx = rng.uniform(-ex / 2 + margin, ex / 2 - margin)
                cy = rng.uniform(-ey / 2 + margin, ey / 2 - margin)
            yaw = rng.uniform(*spec.yaw_range)
            box = _quantize_box((cx, cy, size[2] / 2), size, yaw)
            grown = Box3D(box.center, tuple(np.asarray(box.size) + 2 * spec.clearance), box.yaw)
            if all(bev_intersection_area(grown, b) <= 0.0 for b in boxes):
                boxes.append(box)
                break
        else:
            raise RuntimeError(f"could not place instance {k} after {spec.max_retries} attempts")
    return boxes


def generate_scene(spec: SceneGenSpec, rng: np.random.Generator, scene_id: str) -> Scene:
    n_inst = int(rng.integers(spec.instances[0], spec.instances[1] + 1))
    remote = rng.uniform(size=n_inst) < spec.remote_fraction
    boxes = _place_boxes(spec, rng, n_inst, remote)

    xyz_parts, refl_parts = [], []
    for k, box in enumerate(boxes):
        lo, hi = spec.remote_points if remote[k] else spec.points_per_instance
        m = int(rng.integers(lo, hi + 1))
        local = rng.uniform(-0.5, 0.5, size=(m, 3)) * np.asarray(box.size) * spec.interior_inset
        xyz_parts.append(_local_to_world(box, local))
        base = rng.uniform(0.3, 0.9)
        refl_parts.append(np.clip(base + rng.normal(0, 0.05, m), 0.0, 1.0))

    ex, ey = spec.extent
    grown = [Box3D(b.center, tuple(np.asarray(b.size) + 2 * 0.05), b.yaw) for b in boxes]
    bg: List[np.ndarray] = []
    need = spec.background_points
    while need > 0:
        cand = np.empty((need, 3))
        cand[:, 0] = rng.uniform(-ex / 2, ex / 2, need)
        cand[:, 1] = rng.uniform(-ey / 2, ey / 2, need)
        ground = rng.uniform(size=need) < spec.ground_fraction
        cand[:, 2] = np.where(ground, rng.normal(0.0, 0.03, need), rng.uniform(0.0, spec.clutter_height, need))
        keep = np.ones(need, dtype=bool)
        for b in grown:
            keep &= ~contains_points(b, cand)
        bg.append(cand[keep])
        need -= int(keep.sum())
    bg_xyz = np.concatenate(bg) if bg else np.zeros((0, 3))
    xyz_parts.append(bg_xyz)
    refl_parts.append(rng.uniform(0.0, 0.3, len(bg_xyz)))

    xyz = _q(np.concatenate(xyz_parts))
    refl = _q(np.concatenate(refl_parts))
    instances = []
    for box in boxes:
        idx = np.flatnonzero(contains_points(box, xyz))
        instances.append(Instance(box, spec.class_id, tuple(idx.tolist())))
    return Scene(PointCloud(xyz, refl), tuple(instances), scene_id)


def generate_scenes(spec: SceneGenSpec, n: int, prefix: str = "scene") -> List[Scene]:
    """``n`` scenes, deterministic in ``spec.seed``; scene ``i`` uses its own child stream."""
    seeds = np.random.SeedSequence(spec.seed).spawn(n)
    return [generate_scene(spec, np.random.default_rng(s), f"{prefix}_{i:05d}") for i, s in enumerate(seeds)]


# ---------------------------------------------------------------- input alignment


def _pad(idx: np.ndarray, budget: int, rng: np.random.Generator) -> np.ndarray:
    if len(idx) >= budget:
        return idx[:budget]
    extra = rng.choice(idx, budget - len(idx), replace=True)
    return np.concatenate([idx, extra])


def align_indices(
    cloud: PointCloud,
    budget: int,
    mode: AlignMode = AlignMode.RANDOM,
    rng: Optional[np.random.Generator] = None,
    voxel_size: float = 0.1,
) -> np.ndarray:
    """Indices of exactly ``budget`` points (resampling with replacement when short)."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n = len(cloud)
    if n == 0:
        raise ValueError("cannot align an empty cloud")
    rng = rng or np.random.default_rng(0)
    mode = AlignMode(mode)
    if mode is AlignMode.RANDOM:
        if n >= budget:
            return rng.choice(n, budget, replace=False)
        return _pad(rng.permutation(n), budget, rng)
    keys = np.floor(cloud.xyz / voxel_size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    # one random representative per voxel: shuffle, then take each voxel's first hit
    perm = rng.permutation(n)
    _, first = np.unique(inverse[perm], return_index=True)
    reps = perm[first]
    if len(reps) >= budget:
        return rng.choice(reps, budget, replace=False)
    return _pad(rng.permutation(reps), budget, rng)


def align_input(cloud: PointCloud, budget: int, mode: AlignMode = AlignMode.RANDOM, rng=None, voxel_size: float = 0.1) -> PointCloud:
    return cloud.subset(align_indices(cloud, budget, mode, rng, voxel_size))


def reindex_scene(scene: Scene, idx: np.ndarray) -> Scene:
    """Scene restricted to ``idx`` (duplicates allowed), with interior lists remapped."""
    idx = np.asarray(idx, dtype=np.int64)
    cloud = scene.cloud.subset(idx)
    instances = []
    for inst in scene.instances:
        member = np.zeros(len(scene.cloud), dtype=bool)
        member[list(inst.interior_point_indices)] = True
        new = np.flatnonzero(member[idx])
        instances.append(Instance(inst.box, inst.class_id, tuple(new.tolist())))
    return Scene(cloud, tuple(instances), scene.id)


def align_scene(scene: Scene, budget: int, mode: AlignMode = AlignMode.RANDOM, rng=None, voxel_size: float = 0.1) -> Scene:
    return reindex_scene(scene, align_indices(scene.cloud, budget, mode, rng, voxel_size))


# ---------------------------------------------------------------- augmentation


@dataclass(frozen=True)
class AugmentSpec:
    box_rotation: Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    box_translation: Tuple[Tuple[float, float], ...] = ((-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))
    flip_prob: float = 0.5
    global_rotation: Tuple[float, float] = (-math.pi / 4, math.pi / 4)
    global_scale: Tuple[float, float] = (0.95, 1.05)
    mixup: int = 0
    mixup_retries: int = 10

    def __post_init__(self):
        pairs = [self.box_rotation, self.global_rotation, self.global_scale, *self.box_translation]
        if any(lo > hi for lo, hi in pairs):
            raise ValueError("augmentation ranges must be ordered (lo <= hi)")
        if len(self.box_translation) != 3:
            raise ValueError("box_translation needs x, y and z ranges")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        if self.global_scale[0] <= 0:
            raise ValueError("global scale must be positive")
        if self.mixup < 0:
            raise ValueError("mixup count must be >= 0")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls((0.0, 0.0), ((0.0, 0.0),) * 3, 0.0, (0.0, 0.0), (1.0, 1.0), 0)


@dataclass(frozen=True)
class PoolItem:
    box: Box3D
    class_id: int
    xyz: np.ndarray
    reflectance: Optional[np.ndarray]


def build_mixup_pool(scenes: Sequence[Scene]) -> List[PoolItem]:
    pool = []
    for s in scenes:
        for inst in s.instances:
            idx = list(inst.interior_point_indices)
            if not idx:
                continue
            refl = None if s.cloud.reflectance is None else s.cloud.reflectance[idx]
            pool.append(PoolItem(inst.box, inst.class_id, s.cloud.xyz[idx].copy(), refl))
    return pool


def _rotz(xyz: np.ndarray, angle: float, pivot=(0.0, 0.0)) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    out = xyz.copy()
    x = xyz[:, 0] - pivot[0]
    y = xyz[:, 1] - pivot[1]
    out[:, 0] = c * x - s * y + pivot[0]
    out[:, 1] = s * x + c * y + pivot[1]
    return out


def _overlaps(box: Box3D, others: Sequence[Box3D]) -> bool:
    return any(bev_intersection_area(box, o) > 0.0 for o in others)


def augment(scene: Scene, spec: AugmentSpec, seed, pool: Sequence[PoolItem] = ()) -> Scene:
    """Mix-up, per-box rotation/translation, x-axis flip, global z-rotation and scaling.

    Every transform is rigid (or a uniform scale), so interior points keep their
    membership. Boxes and their points always move together.
    """
    rng = np.random.default_rng(seed)
    xyz = np.array(scene.cloud.xyz)
    refl = None if scene.cloud.reflectance is None else np.array(scene.cloud.reflectance)
    feats = scene.cloud.features
    boxes = [inst.box for inst in scene.instances]
    classes = [inst.class_id for inst in scene.instances]
    members = [np.asarray(inst.interior_point_indices, dtype=np.int64) for inst in scene.instances]

    if spec.mixup and pool and feats is None:
        keep_pts = np.ones(len(xyz), dtype=bool)
        added_xyz, added_refl = [], []
        offset = len(xyz)
        for _ in range(spec.mixup):
            placed = False
            for _ in range(spec.mixup_retries):
                item = pool[int(rng.integers(len(pool)))]
                if _overlaps(item.box, boxes):
                    continue
                # background points swallowed by the pasted box are removed
                keep_pts &= ~contains_points(item.box, xyz)
                boxes.append(item.box)
                classes.append(item.class_id)
                members.append(np.arange(offset, offset + len(item.xyz)))
                offset += len(item.xyz)
                added_xyz.append(item.xyz)
                added_refl.append(item.reflectance if item.reflectance is not None else np.zeros(len(item.xyz)))
                placed = True
                break
            if not placed:
                log.info("mix-up: no collision-free pool instance for %s", scene.id)
        if added_xyz:
            n0 = len(xyz)
            owned = np.zeros(n0, dtype=bool)
            for mem in members:
                owned[mem[mem < n0]] = True
            keep_pts |= owned
            remap = np.full(n0, -1, dtype=np.int64)
            remap[keep_pts] = np.arange(int(keep_pts.sum()))
            shift = n0 - int(keep_pts.sum())
            members = [np.where(m < n0, remap[np.minimum(m, n0 - 1)], m - shift) for m in members]
            xyz = np.concatenate([xyz[keep_pts], *added_xyz])
            if refl is not None:
                refl = np.concatenate([refl[keep_pts], *added_refl])

    for k, box in enumerate(boxes):
        dtheta = rng.uniform(*spec.box_rotation)
        delta = np.array([rng.uniform(*r) for r in spec.box_translation])
        if dtheta == 0.0 and not delta.any():
            continue
        moved = Box3D(tuple(np.asarray(box.center) + delta), box.size, box.yaw + dtheta)
        if _overlaps(moved, boxes[:k] + boxes[k + 1 :]):
            continue
        pts = _rotz(xyz[members[k]], dtheta, box.center[:2]) + delta
        xyz[members[k]] = pts
        boxes[k] = moved

    if rng.uniform() < spec.flip_prob:
        xyz[:, 1] = -xyz[:, 1]
        boxes = [Box3D((b.center[0], -b.center[1], b.center[2]), b.size, -b.yaw) for b in boxes]

    angle = rng.uniform(*spec.global_rotation)
    scale = rng.uniform(*spec.global_scale)
    if angle != 0.0:
        xyz = _rotz(xyz, angle)
    xyz = xyz * scale
    new_boxes = []
    for b in boxes:
        c = _rotz(np.asarray(b.center)[None], angle)[0] * scale
        new_boxes.append(Box3D(tuple(c), tuple(np.asarray(b.size) * scale), b.yaw + angle))

    instances = tuple(Instance(b, c, tuple(m.tolist())) for b, c, m in zip(new_boxes, classes, members))
    return Scene(PointCloud(xyz, refl, feats), instances, scene.id)


# ---------------------------------------------------------------- recall benchmark


@dataclass(frozen=True)
class RecallBenchSpec:
    """Scenes with dense nearby objects, sparse remote objects and a dense ground.

    Per-point features imitate learned semantics: ground points cluster tightly,
    object points spread around a class embedding, and remote objects carry a
    weaker version of that embedding.
    """

    seed: int = 2020
    n_points: int = 4096
    extent: Tuple[float, float] = (80.0, 80.0)
    near_instances: Tuple[int, int] = (4, 8)
    near_points: Tuple[int, int] = (150, 300)
    remote_instances: Tuple[int, int] = (4, 8)
    remote_points: Tuple[int, int] = (3, 8)
    feature_dim: int = 8
    class_scale: float = 40.0
    part_noise: float = 8.0
    remote_strength: Tuple[float, float] = (0.3, 0.6)
    ground_noise: float = 0.5
    clutter_fraction: float = 0.4
    clutter_height: float = 3.0


def recall_benchmark_scenes(spec: RecallBenchSpec, n: int) -> List[Scene]:
    seeds = np.random.SeedSequence(spec.seed).spawn(n)
    return [_bench_scene(spec, np.random.default_rng(s), f"bench_{i:05d}") for i, s in enumerate(seeds)]


def _bench_scene(spec: RecallBenchSpec, rng: np.random.Generator, scene_id: str) -> Scene:
    n_near = int(rng.integers(spec.near_instances[0], spec.near_instances[1] + 1))
    n_far = int(rng.integers(spec.remote_instances[0], spec.remote_instances[1] + 1))
    gen = SceneGenSpec(extent=spec.extent, clearance=0.5)
    remote = np.array([False] * n_near + [True] * n_far)
    boxes = _place_boxes(gen, rng, len(remote), remote)
    direction = rng.normal(size=spec.feature_dim)
    direction /= np.linalg.norm(direction)
    class_vec = spec.class_scale * direction

    xyz, feats = [], []
    for box, far in zip(boxes, remote):
        lo, hi = spec.remote_points if far else spec.near_points
        m = int(rng.integers(lo, hi + 1))
        local = rng.uniform(-0.5, 0.5, size=(m, 3)) * np.asarray(box.size) * 0.98
        xyz.append(_local_to_world(box, local))
        strength = rng.uniform(*spec.remote_strength) if far else 1.0
        feats.append(strength * class_vec + strength * rng.normal(0.0, spec.part_noise, (m, spec.feature_dim)))
    n_bg = spec.n_points - sum(len(p) for p in xyz)
    if n_bg < 0:
        raise ValueError("benchmark objects exceed the point budget")
    ex, ey = spec.extent
    grown = [Box3D(b.center, tuple(np.asarray(b.size) + 0.1), b.yaw) for b in boxes]
    bg: List[np.ndarray] = []
    need = n_bg
    while need > 0:
        clutter = rng.uniform(size=need) < spec.clutter_fraction
        z = np.where(clutter, rng.uniform(0.0, spec.clutter_height, need), rng.normal(0.0, 0.03, need))
        cand = np.column_stack([rng.uniform(-ex / 2, ex / 2, need), rng.uniform(-ey / 2, ey / 2, need), z])
        keep = np.ones(need, dtype=bool)
        for b in grown:
            keep &= ~contains_points(b, cand)
        bg.append(cand[keep])
        need -= int(keep.sum())
    if bg:
        bg_xyz = np.concatenate(bg)
        xyz.append(bg_xyz)
        feats.append(rng.normal(0.0, spec.ground_noise, (len(bg_xyz), spec.feature_dim)))
    xyz_all = _q(np.concatenate(xyz))
    feat_all = _q(np.concatenate(feats))
    instances = tuple(Instance(b, 0, tuple(np.flatnonzero(contains_points(b, xyz_all)).tolist())) for b in boxes)
    return Scene(PointCloud(xyz_all, features=feat_all), instances, scene_id)

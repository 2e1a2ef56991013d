"""Domain value types: point clouds, oriented boxes, instances, scenes, detections."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_yaw(theta: float) -> float:
    """Map an angle onto the canonical range [-pi, pi)."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"yaw must be finite, got {theta!r}")
    out = math.fmod(theta + math.pi, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    out -= math.pi
    # fmod rounding can land exactly on +pi
    if out >= math.pi:
        out -= TWO_PI
    return out


def normalize_yaw_array(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.mod(theta + np.pi, TWO_PI) - np.pi
    return np.where(out >= np.pi, out - TWO_PI, out)


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x, y, z), size (l, w, h) and yaw about +z."""

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size need three components")
        if not all(math.isfinite(c) for c in center):
            raise ValueError(f"non-finite box center {center}")
        if not all(math.isfinite(s) and s > 0.0 for s in size):
            raise ValueError(f"box size must be strictly positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", normalize_yaw(self.yaw))

    @classmethod
    def from_array(cls, arr) -> "Box3D":
        arr = np.asarray(arr, dtype=np.float64).reshape(7)
        return cls(tuple(arr[:3]), tuple(arr[3:6]), float(arr[6]))

    def to_array(self) -> np.ndarray:
        return np.array([*self.center, *self.size, self.yaw], dtype=np.float64)

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h


class PointCloud:
    """N points with optional reflectance and per-point features.

    Arrays are copied and marked read-only, so a cloud can be shared freely.
    """

    __slots__ = ("xyz", "reflectance", "features")

    def __init__(self, xyz, reflectance=None, features=None, *, check_finite: bool = True):
        xyz = np.array(xyz, dtype=np.float64, copy=True).reshape(-1, 3)
        n = xyz.shape[0]
        if check_finite and not np.all(np.isfinite(xyz)):
            raise ValueError("point coordinates must be finite")
        if reflectance is not None:
            reflectance = np.array(reflectance, dtype=np.float64, copy=True).reshape(-1)
            if reflectance.shape[0] != n:
                raise ValueError("reflectance length does not match point count")
        if features is not None:
            features = np.array(features, dtype=np.float64, copy=True)
            if features.ndim == 1:
                features = features.reshape(n, -1) if n else features.reshape(0, 0)
            if features.ndim != 2 or features.shape[0] != n:
                raise ValueError("features must be an N x C matrix")
        for arr in (xyz, reflectance, features):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "reflectance", reflectance)
        object.__setattr__(self, "features", features)

    def __setattr__(self, name, value):
        raise AttributeError("PointCloud is immutable")

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def __repr__(self) -> str:
        c = None if self.features is None else self.features.shape[1]
        return f"PointCloud(n={len(self)}, reflectance={self.reflectance is not None}, channels={c})"

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            self.xyz[idx],
            None if self.reflectance is None else self.reflectance[idx],
            None if self.features is None else self.features[idx],
            check_finite=False,
        )

    def raw_channels(self) -> np.ndarray:
        """xyz plus reflectance (when present) as an N x (3|4) matrix."""
        if self.reflectance is None:
            return np.array(self.xyz)
        return np.concatenate([self.xyz, self.reflectance[:, None]], axis=1)


@dataclass(frozen=True)
class Instance:
    box: Box3D
    class_id: int = 0
    interior_point_indices: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(
            self, "interior_point_indices", tuple(int(i) for i in self.interior_point_indices)
        )


@dataclass(frozen=True)
class Scene:
    cloud: PointCloud
    instances: Tuple[Instance, ...] = ()
    id: str = "scene"

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))

    @property
    def boxes(self) -> List[Box3D]:
        return [inst.box for inst in self.instances]

    def box_array(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, 7))
        return np.stack([inst.box.to_array() for inst in self.instances])


@dataclass(frozen=True)
class Detection:
    box: Box3D
    class_id: int = 0
    score: float = 0.0

    def __post_init__(self):
        score = float(self.score)
        if not (0.0 <= score <= 1.0):
            raise ValueError(f"detection score must lie in [0, 1], got {score}")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "class_id", int(self.class_id))


@dataclass
class Violation:
    kind: str
    message: str
    instance: Optional[int] = None

    def __str__(self) -> str:
        where = "" if self.instance is None else f" (instance {self.instance})"
        return f"{self.kind}{where}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        # truthy when there is something to report
        return bool(self.violations)

    def __len__(self) -> int:
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, message: str, instance: Optional[int] = None) -> None:
        self.violations.append(Violation(kind, message, instance))


def validate_scene(scene: Scene) -> ValidationReport:
    """Collect every invariant violation of ``scene``; an empty report means valid."""
    from .boxgeom import contains_points

    report = ValidationReport()
    cloud = scene.cloud
    n = len(cloud)
    bad = ~np.all(np.isfinite(cloud.xyz), axis=1)
    for i in np.flatnonzero(bad):
        report.add("non_finite_point", f"point {i} has non-finite coordinates")
    if cloud.reflectance is not None:
        r = cloud.reflectance
        out = np.flatnonzero(~((r >= 0.0) & (r <= 1.0)))
        for i in out:
            report.add("reflectance_range", f"point {i} reflectance {r[i]!r} outside [0, 1]")
    if cloud.features is not None and not np.all(np.isfinite(cloud.features)):
        report.add("non_finite_feature", "feature matrix contains non-finite values")

    for k, inst in enumerate(scene.instances):
        idx = np.asarray(inst.interior_point_indices, dtype=np.int64)
        if idx.size == 0:
            continue
        out_of_range = (idx < 0) | (idx >= n)
        for i in idx[out_of_range]:
            report.add("index_range", f"index {i} outside cloud of {n} points", k)
        idx = idx[~out_of_range]
        if len(set(idx.tolist())) != idx.size:
            report.add("duplicate_index", "interior index list has duplicates", k)
        finite = np.all(np.isfinite(cloud.xyz[idx]), axis=1)
        inside = np.zeros(idx.size, dtype=bool)
        inside[finite] = contains_points(inst.box, cloud.xyz[idx[finite]])
        # shared points are legal only when every owning box contains them, which this covers
        for i in idx[finite & ~inside]:
            report.add("index_outside_box", f"point {i} is not inside the instance box", k)

    return report


def scenes_instance_count(scenes: Sequence[Scene]) -> int:
    return sum(len(s.instances) for s in scenes)

"""Farthest point sampling on coordinates (D-FPS), on the blended spatial/feature
criterion (F-FPS), their fusion, and the points-recall statistic."""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .core import PointCloud, Scene


class Strategy(str, enum.Enum):
    DFPS = "DFPS"
    FFPS = "FFPS"
    FUSION = "FUSION"


class Origin(enum.IntEnum):
    FROM_DFPS = 0
    FROM_FFPS = 1


@dataclass(frozen=True)
class SamplingConfig:
    n_out: int
    lam: float = 1.0
    strategy: Strategy = Strategy.DFPS
    start_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "n_out", int(self.n_out))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "start_index", int(self.start_index))
        if self.n_out < 1:
            raise ValueError("n_out must be >= 1")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be a finite non-negative number")
        if self.strategy is Strategy.FUSION and self.n_out % 2:
            raise ValueError("fusion sampling needs an even n_out")
        if self.start_index < 0:
            raise ValueError("start_index must be non-negative")


@dataclass(frozen=True)
class SampleResult:
    indices: np.ndarray
    origin: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def ffps_indices(self) -> np.ndarray:
        return self.indices[self.origin == Origin.FROM_FFPS]

    @property
    def dfps_indices(self) -> np.ndarray:
        return self.indices[self.origin == Origin.FROM_DFPS]


def pairwise_criterion(xyz_a, xyz_b, feat_a, feat_b, lam: float) -> float:
    """``lam * |xyz_a - xyz_b| + |feat_a - feat_b|`` (both Euclidean)."""
    fa = np.asarray(feat_a, dtype=np.float64).reshape(-1)
    fb = np.asarray(feat_b, dtype=np.float64).reshape(-1)
    if fa.shape != fb.shape:
        raise ValueError(f"feature dimensions differ: {fa.shape} vs {fb.shape}")
    d = np.asarray(xyz_a, dtype=np.float64) - np.asarray(xyz_b, dtype=np.float64)
    return float(lam * math.sqrt(float(np.dot(d, d))) + math.sqrt(float(np.dot(fa - fb, fa - fb))))


@numba.njit(cache=True)
def _fps_kernel(xyz, feats, lam, use_feats, start, k):
    n = xyz.shape[0]
    c = feats.shape[1]
    mind = np.full(n, np.inf)
    out = np.empty(k, dtype=np.int64)
    sel = start
    for j in range(k):
        out[j] = sel
        x0, y0, z0 = xyz[sel, 0], xyz[sel, 1], xyz[sel, 2]
        for i in range(n):
            dx = xyz[i, 0] - x0
            dy = xyz[i, 1] - y0
            dz = xyz[i, 2] - z0
            d = lam * math.sqrt(dx * dx + dy * dy + dz * dz)
            if use_feats:
                acc = 0.0
                for q in range(c):
                    df = feats[i, q] - feats[sel, q]
                    acc += df * df
                d += math.sqrt(acc)
            if d < mind[i]:
                mind[i] = d
        mind[sel] = -np.inf
        best = -1
        best_val = -np.inf
        for i in range(n):
            if mind[i] > best_val:
                best_val = mind[i]
                best = i
        sel = best
    return out


def _criterion_inputs(cloud: PointCloud, strategy: Strategy, lam: float):
    xyz = np.ascontiguousarray(cloud.xyz, dtype=np.float64)
    if strategy is Strategy.DFPS:
        return xyz, np.zeros((len(xyz), 0)), 1.0, False
    if cloud.features is None:
        raise ValueError("F-FPS needs per-point features")
    feats = np.ascontiguousarray(cloud.features, dtype=np.float64)
    return xyz, feats, lam, True


def fps_indices(cloud: PointCloud, n_out: int, strategy: Strategy, lam: float = 1.0, start_index: int = 0) -> np.ndarray:
    n = len(cloud)
    if n_out > n:
        raise ValueError(f"cannot sample {n_out} points from {n}")
    if n_out < 1:
        return np.zeros(0, dtype=np.int64)
    if not 0 <= start_index < n:
        raise ValueError(f"start_index {start_index} outside cloud of {n} points")
    xyz, feats, lam_eff, use = _criterion_inputs(cloud, Strategy(strategy), lam)
    return _fps_kernel(xyz, feats, float(lam_eff), use, int(start_index), int(n_out))


def fps(cloud: PointCloud, config: SamplingConfig) -> SampleResult:
    """Greedy maximin selection under D-FPS or F-FPS, seeded at ``config.start_index``."""
    if config.strategy is Strategy.FUSION:
        return fusion_sample(cloud, config)
    idx = fps_indices(cloud, config.n_out, config.strategy, config.lam, config.start_index)
    tag = Origin.FROM_FFPS if config.strategy is Strategy.FFPS else Origin.FROM_DFPS
    return SampleResult(idx, np.full(len(idx), int(tag), dtype=np.int8))


def fusion_sample(cloud: PointCloud, config: SamplingConfig) -> SampleResult:
    """Half the budget from F-FPS, half from D-FPS, F-FPS block first.

    The two runs are independent, so a physical point may appear in both blocks.
    """
    if config.strategy is not Strategy.FUSION:
        raise ValueError("fusion_sample expects a FUSION config")
    half = config.n_out // 2
    if config.n_out > len(cloud):
        raise ValueError(f"cannot sample {config.n_out} points from {len(cloud)}")
    f_idx = fps_indices(cloud, half, Strategy.FFPS, config.lam, config.start_index)
    d_idx = fps_indices(cloud, half, Strategy.DFPS, 1.0, config.start_index)
    origin = np.concatenate(
        [np.full(half, int(Origin.FROM_FFPS), np.int8), np.full(half, int(Origin.FROM_DFPS), np.int8)]
    )
    return SampleResult(np.concatenate([f_idx, d_idx]), origin)


def fps_reference(xyz: np.ndarray, feats: Optional[np.ndarray], lam: float, n_out: int, start_index: int = 0) -> np.ndarray:
    """Brute-force greedy maximin over an explicit criterion table.

    O(N^2) memory and O(N^2 k) time; meant as a correctness oracle, not for use at scale.
    """
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    table = lam * np.sqrt(((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(-1))
    if feats is not None:
        f = np.asarray(feats, dtype=np.float64)
        table = table + np.sqrt(((f[:, None, :] - f[None, :, :]) ** 2).sum(-1))
    chosen = [start_index]
    while len(chosen) < n_out:
        best, best_val = -1, -np.inf
        for i in range(n):
            if i in chosen:
                continue
            m = min(table[i, s] for s in chosen)
            if m > best_val:
                best, best_val = i, m
        chosen.append(best)
    return np.array(chosen[:n_out], dtype=np.int64)


def points_recall(scenes: Sequence[Scene], results: Sequence) -> float:
    """Fraction of all instances with at least one interior point among the samples.

    ``results`` holds one SampleResult (or plain index array) per scene.
    """
    if len(scenes) != len(results):
        raise ValueError("need exactly one sample result per scene")
    total = hit = 0
    for scene, res in zip(scenes, results):
        idx = res.indices if isinstance(res, SampleResult) else np.asarray(res)
        chosen = set(np.asarray(idx).tolist())
        for inst in scene.instances:
            total += 1
            if chosen.intersection(inst.interior_point_indices):
                hit += 1
    if total == 0:
        raise ValueError("points recall is undefined without instances")
    return hit / total


@dataclass
class RecallCell:
    strategy: str
    lam: Optional[float]
    budget: int
    recall: float


def recall_grid(
    scenes: Sequence[Scene],
    cells: Iterable[Tuple[Strategy, float]],
    budgets: Sequence[int],
    start_index: int = 0,
) -> Tuple[List[RecallCell], Dict[str, float]]:
    """Points recall for every (strategy, lambda) row and budget, plus kernel throughput.

    Greedy FPS is prefix-stable, so one run at the largest budget serves all smaller ones.
    Throughput is reported as selected points per second per row.
    """
    budgets = sorted(set(int(b) for b in budgets))
    rows = []
    timing: Dict[str, float] = {}
    for strategy, lam in cells:
        strategy = Strategy(strategy)
        label = row_label(strategy, lam)
        per_budget = {b: [] for b in budgets}
        picked = 0
        t0 = time.perf_counter()
        for scene in scenes:
            k = min(budgets[-1], len(scene.cloud))
            if strategy is Strategy.FUSION:
                res = fusion_sample(scene.cloud, SamplingConfig(k - k % 2, lam, Strategy.FUSION, start_index))
                half = len(res.indices) // 2
                f, d = res.indices[:half], res.indices[half:]
                for b in budgets:
                    h = min(b, k) // 2
                    per_budget[b].append(np.concatenate([f[:h], d[:h]]))
            else:
                idx = fps_indices(scene.cloud, k, strategy, lam, start_index)
                for b in budgets:
                    per_budget[b].append(idx[: min(b, k)])
            picked += k
        elapsed = time.perf_counter() - t0
        timing[label] = picked / elapsed if elapsed > 0 else float("inf")
        for b in budgets:
            rows.append(RecallCell(strategy.value, None if strategy is Strategy.DFPS else lam, b, points_recall(scenes, per_budget[b])))
    return rows, timing


def row_label(strategy: Strategy, lam: Optional[float]) -> str:
    strategy = Strategy(strategy)
    if strategy is Strategy.DFPS:
        return "D-FPS"
    name = "F-FPS" if strategy is Strategy.FFPS else "FS"
    return f"{name} (lambda={float(lam):.1f})"

"""Detection quality: greedy matching, average precision, TP errors and NDS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boxgeom import iou_3d
from .core import Box3D, Detection


@dataclass
class MatchResult:
    tp: np.ndarray  # per detection, in input order
    matched: np.ndarray  # instance index per detection, -1 for false positives
    detected: np.ndarray  # per instance
    ious: np.ndarray  # IoU of each TP with its instance (0 for FPs)

    @property
    def n_tp(self) -> int:
        return int(self.tp.sum())

    @property
    def n_fp(self) -> int:
        return int((~self.tp).sum())


def _boxes(items) -> List[Box3D]:
    out = []
    for it in items:
        out.append(it if isinstance(it, Box3D) else it.box)
    return out


def match(dets: Sequence[Detection], instances, iou_threshold: float) -> MatchResult:
    """Greedy matching by descending score (ties keep input order).

    A detection is a TP when its best-IoU still-unmatched instance reaches the threshold.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in (0, 1]")
    gts = _boxes(instances)
    n = len(dets)
    tp = np.zeros(n, dtype=bool)
    matched = np.full(n, -1, dtype=np.int64)
    ious = np.zeros(n)
    taken = np.zeros(len(gts), dtype=bool)
    order = sorted(range(n), key=lambda i: (-dets[i].score, i))
    for i in order:
        best, best_iou = -1, -1.0
        for k, g in enumerate(gts):
            if taken[k]:
                continue
            v = iou_3d(dets[i].box, g)
            if v > best_iou:
                best, best_iou = k, v
        if best >= 0 and best_iou >= iou_threshold:
            tp[i] = True
            matched[i] = best
            ious[i] = best_iou
            taken[best] = True
    return MatchResult(tp, matched, taken, ious)


def precision_recall(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(tp, dtype=np.float64)[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, 1e-300)
    return precision, recall


def ap_from_pr(precision: np.ndarray, recall: np.ndarray, sample_points: Optional[int] = None) -> float:
    """Area under the precision envelope.

    ``sample_points=None`` integrates over every recall step; 11 or 40 gives the
    KITTI-style sampled variants (40 skips recall 0).
    """
    if len(recall) == 0:
        return 0.0
    env = np.maximum.accumulate(precision[::-1])[::-1]
    if sample_points is None:
        prev = np.concatenate([[0.0], recall[:-1]])
        return float(np.sum((recall - prev) * env))
    if sample_points == 11:
        grid = np.linspace(0.0, 1.0, 11)
    else:
        grid = np.linspace(0.0, 1.0, sample_points + 1)[1:]
    total = 0.0
    for r in grid:
        sel = recall >= r - 1e-12
        total += env[sel].max() if sel.any() else 0.0
    return float(total / len(grid))


def average_precision(
    dets_per_scene: Sequence[Sequence[Detection]],
    instances_per_scene: Sequence,
    iou_threshold: float,
    sample_points: Optional[int] = None,
) -> float:
    """AP over many scenes: per-scene greedy matching, then one pooled PR curve."""
    n_gt = sum(len(g) for g in instances_per_scene)
    if n_gt == 0:
        raise ValueError("average precision needs at least one ground-truth instance")
    scores, flags = [], []
    for dets, gts in zip(dets_per_scene, instances_per_scene):
        res = match(dets, gts, iou_threshold)
        scores.extend(d.score for d in dets)
        flags.extend(res.tp.tolist())
    if not scores:
        return 0.0
    p, r = precision_recall(np.array(scores), np.array(flags), n_gt)
    if sample_points is None:
        # every TP raises recall by exactly 1 / n_gt: sum envelope values in counts
        tp = np.asarray(flags, dtype=bool)[np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")]
        env = np.maximum.accumulate(p[::-1])[::-1]
        return float(math.fsum(env[tp]) / n_gt)
    return ap_from_pr(p, r, sample_points)


@dataclass
class TpErrors:
    mATE: float = 0.0
    mASE: float = 0.0
    mAOE: float = 0.0
    mAVE: float = 0.0
    mAAE: float = 0.0

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return (self.mATE, self.mASE, self.mAOE, self.mAVE, self.mAAE)


def size_aligned_iou(a: Box3D, b: Box3D) -> float:
    """IoU of the two sizes once centers and headings are aligned."""
    inter = float(np.prod(np.minimum(a.size, b.size)))
    return inter / (a.volume + b.volume - inter)


def yaw_error(a: float, b: float, period: float = 2 * math.pi) -> float:
    """Smallest absolute heading difference; ``period=pi`` ignores front/back."""
    d = math.fmod(a - b, period)
    d = abs(d)
    return min(d, period - d)


def tp_errors(dets_per_scene, instances_per_scene, iou_threshold: float, yaw_period: float = 2 * math.pi) -> TpErrors:
    """Mean translation (BEV center distance), scale and orientation errors over TPs.

    Velocity and attribute errors stay 0: the toy pipeline has no heads for them.
    """
    ate, ase, aoe = [], [], []
    for dets, gts in zip(dets_per_scene, instances_per_scene):
        gboxes = _boxes(gts)
        res = match(dets, gboxes, iou_threshold)
        for i in np.flatnonzero(res.tp):
            d, g = dets[i].box, gboxes[res.matched[i]]
            ate.append(math.hypot(d.center[0] - g.center[0], d.center[1] - g.center[1]))
            ase.append(1.0 - size_aligned_iou(d, g))
            aoe.append(yaw_error(d.yaw, g.yaw, yaw_period))
    if not ate:
        # nuScenes convention: undefined errors count as the worst case
        return TpErrors(1.0, 1.0, 1.0, 0.0, 0.0)
    return TpErrors(float(np.mean(ate)), float(np.mean(ase)), float(np.mean(aoe)))


def nds(mAP: float, mATE: float, mASE: float, mAOE: float, mAVE: float, mAAE: float) -> float:
    """nuScenes detection score: (5 mAP + sum(1 - min(1, err))) / 10."""
    if not 0.0 <= mAP <= 1.0:
        raise ValueError("mAP must lie in [0, 1]")
    errs = (mATE, mASE, mAOE, mAVE, mAAE)
    if any(e < 0 for e in errs):
        raise ValueError("TP errors must be non-negative")
    return (5.0 * mAP + sum(1.0 - min(1.0, e) for e in errs)) / 10.0


@dataclass
class EvalReport:
    """Evaluation summary with a stable field order."""

    ap: Dict[str, Dict[str, float]]
    mAP: float
    nds: float
    errors: TpErrors
    n_scenes: int
    n_instances: int
    n_detections: int
    points_recall: Optional[float] = None
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "ap": {c: {k: self.ap[c][k] for k in sorted(self.ap[c])} for c in sorted(self.ap)},
            "mAP": self.mAP,
            "NDS": self.nds,
            "mATE": self.errors.mATE,
            "mASE": self.errors.mASE,
            "mAOE": self.errors.mAOE,
            "mAVE": self.errors.mAVE,
            "mAAE": self.errors.mAAE,
            "n_scenes": self.n_scenes,
            "n_instances": self.n_instances,
            "n_detections": self.n_detections,
            "points_recall": self.points_recall,
        }
        out.update(self.extra)
        return out


def evaluate(
    dets_per_scene: Sequence[Sequence[Detection]],
    scenes,
    iou_thresholds: Sequence[float] = (0.5, 0.7),
    class_names: Optional[Dict[int, str]] = None,
    primary_threshold: float = 0.7,
    points_recall: Optional[float] = None,
    yaw_period: float = 2 * math.pi,
) -> EvalReport:
    """Per-class AP at each threshold, mAP at ``primary_threshold`` and NDS."""
    class_names = class_names or {}
    classes = sorted({inst.class_id for s in scenes for inst in s.instances} | {d.class_id for ds in dets_per_scene for d in ds})
    ap: Dict[str, Dict[str, float]] = {}
    primary = []
    errors_src = ([], [])
    for c in classes:
        name = class_names.get(c, str(c))
        dets_c = [[d for d in ds if d.class_id == c] for ds in dets_per_scene]
        gts_c = [[i for i in s.instances if i.class_id == c] for s in scenes]
        if sum(len(g) for g in gts_c) == 0:
            continue
        ap[name] = {f"AP@{t:g}": average_precision(dets_c, gts_c, t) for t in iou_thresholds}
        primary.append(average_precision(dets_c, gts_c, primary_threshold))
        errors_src[0].extend(dets_c)
        errors_src[1].extend(gts_c)
    mAP = float(np.mean(primary)) if primary else 0.0
    errs = tp_errors(errors_src[0], errors_src[1], primary_threshold, yaw_period) if primary else TpErrors(1.0, 1.0, 1.0)
    return EvalReport(
        ap,
        mAP,
        nds(mAP, *errs.as_tuple()),
        errs,
        len(scenes),
        sum(len(s.instances) for s in scenes),
        sum(len(d) for d in dets_per_scene),
        points_recall,
    )

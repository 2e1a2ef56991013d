"""Candidate generation, the anchor-free box head, angle bins and label assignment."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .boxgeom import contains_points, iou_3d, to_box_frame
from .core import Box3D, Detection, Scene, normalize_yaw, normalize_yaw_array
from .nn import MlpSpec, SelectionCache, ball_query, group_and_pool, mlp_forward
from .sampling import Origin

DEFAULT_ANGLE_BINS = 12


class Assignment(str, enum.Enum):
    CENTERNESS = "centerness"
    MASK = "mask"
    IOU = "iou"


# ---------------------------------------------------------------- angle bins


def bin_width(n_bins: int) -> float:
    return 2.0 * math.pi / n_bins


def bin_centers(n_bins: int) -> np.ndarray:
    return -math.pi + (np.arange(n_bins) + 0.5) * bin_width(n_bins)


def encode_angle(theta: float, n_bins: int = DEFAULT_ANGLE_BINS) -> Tuple[int, float]:
    """Bin index over [-pi, pi) and the residual from that bin's center."""
    theta = normalize_yaw(theta)
    w = bin_width(n_bins)
    b = min(int(math.floor((theta + math.pi) / w)), n_bins - 1)
    return b, theta - (-math.pi + (b + 0.5) * w)


def encode_angles(theta: np.ndarray, n_bins: int = DEFAULT_ANGLE_BINS) -> Tuple[np.ndarray, np.ndarray]:
    theta = normalize_yaw_array(theta)
    w = bin_width(n_bins)
    b = np.minimum(np.floor((theta + math.pi) / w).astype(np.int64), n_bins - 1)
    return b, theta - bin_centers(n_bins)[b]


def decode_angle(bin_index: int, residual: float, n_bins: int = DEFAULT_ANGLE_BINS) -> float:
    return normalize_yaw(bin_centers(n_bins)[bin_index] + residual)


# ---------------------------------------------------------------- center-ness


def face_distances(box: Box3D, points: np.ndarray) -> np.ndarray:
    """Distances to the (front, back, left, right, top, bottom) faces, shape (n, 6)."""
    local = to_box_frame(box, points)
    half = 0.5 * np.asarray(box.size)
    return np.stack(
        [
            half[0] - local[:, 0],
            half[0] + local[:, 0],
            half[1] - local[:, 1],
            half[1] + local[:, 1],
            half[2] - local[:, 2],
            half[2] + local[:, 2],
        ],
        axis=1,
    )


def centerness_batch(points: np.ndarray, box: Box3D) -> Tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inside = contains_points(box, pts)
    d = np.clip(face_distances(box, pts), 0.0, None)
    pairs = d.reshape(-1, 3, 2)
    ratio = pairs.min(axis=2) / pairs.max(axis=2)
    ctr = np.cbrt(np.prod(ratio, axis=1))
    return inside.astype(np.int64), np.where(inside, ctr, 0.0)


def centerness(candidate_xyz, box: Box3D) -> Tuple[int, float]:
    """(l_mask, l_ctrness) of one candidate location with respect to ``box``."""
    mask, ctr = centerness_batch(np.asarray(candidate_xyz, dtype=np.float64).reshape(1, 3), box)
    return int(mask[0]), float(ctr[0])


# ---------------------------------------------------------------- candidates


@dataclass
class CandidateSet:
    origin_xyz: np.ndarray
    shift: Value
    features: Value
    valid: np.ndarray
    origin_index: np.ndarray
    anchor: Optional[np.ndarray] = None

    @property
    def candidate_xyz(self) -> np.ndarray:
        return self.origin_xyz + self.shift.data

    @property
    def anchor_xyz(self) -> np.ndarray:
        """Candidate locations the box regression is anchored on (no gradient flows
        through them; the shift is supervised by its own loss and the grouping)."""
        return self.candidate_xyz if self.anchor is None else self.anchor

    def __len__(self) -> int:
        return len(self.origin_xyz)


def cg_layer(
    rep_xyz: np.ndarray,
    rep_features: Value,
    origin: np.ndarray,
    shift_mlp: MlpSpec,
    shift_layers,
    radius: float,
    max_neighbors: int,
    group_mlp: MlpSpec,
    group_layers,
    center_origin: Origin = Origin.FROM_FFPS,
    cache: Optional[SelectionCache] = None,
) -> CandidateSet:
    """Shift the F-FPS representative points toward object centers and pool features
    from the whole representative set around each shifted candidate."""
    rep_xyz = np.asarray(rep_xyz, dtype=np.float64)
    sel = np.flatnonzero(np.asarray(origin) == int(center_origin))
    if sel.size == 0:
        raise ValueError("candidate generation needs at least one F-FPS representative point")
    origin_xyz = rep_xyz[sel]
    shift = mlp_forward(shift_mlp, shift_layers, ad.gather_rows(rep_features, sel))
    cand = ad.as_value(origin_xyz) + shift

    def group():
        return ball_query(cand.data, rep_xyz, radius, max_neighbors)

    nbr, valid = group() if cache is None else cache.get("cg.group", group)
    anchor = cand.data.copy() if cache is None else cache.get("cg.anchor", lambda: cand.data.copy())
    feats = group_and_pool(group_mlp, group_layers, rep_xyz, rep_features, cand, nbr, valid, scale=1.0 / radius)
    return CandidateSet(origin_xyz, shift, feats, valid, sel, anchor)


@dataclass
class HeadOutput:
    """Raw head predictions for M candidates (``raw`` is the full M x (7 + 2 N_a) matrix)."""

    raw: Value
    n_bins: int

    def _cols(self, lo, hi) -> Value:
        return self.raw[:, lo:hi]

    @property
    def score_logit(self) -> Value:
        return self._cols(0, 1)

    @property
    def offsets(self) -> Value:
        return self._cols(1, 4)

    @property
    def sizes(self) -> Value:
        return self._cols(4, 7)

    @property
    def bin_logits(self) -> Value:
        return self._cols(7, 7 + self.n_bins)

    @property
    def residuals(self) -> Value:
        return self._cols(7 + self.n_bins, 7 + 2 * self.n_bins)

    def scores(self) -> np.ndarray:
        x = self.raw.data[:, 0]
        return 1.0 / (1.0 + np.exp(-x))


def head_width(n_bins: int) -> int:
    return 7 + 2 * n_bins


# ---------------------------------------------------------------- targets


@dataclass
class AssignedTarget:
    l_mask: int
    l_ctrness: float
    u: float
    instance: Optional[int]
    offset: Optional[np.ndarray] = None
    size: Optional[np.ndarray] = None
    angle_bin: Optional[int] = None
    angle_residual: Optional[float] = None
    shift: Optional[np.ndarray] = None


@dataclass
class TargetBatch:
    """Array form of the per-candidate targets, used by the loss."""

    l_mask: np.ndarray
    l_ctrness: np.ndarray
    u: np.ndarray
    instance: np.ndarray
    offset: np.ndarray
    size: np.ndarray
    angle_bin: np.ndarray
    angle_residual: np.ndarray
    gt_boxes: np.ndarray
    shift: np.ndarray
    shift_positive: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return self.u > 0

    def to_list(self) -> List[AssignedTarget]:
        out = []
        for i in range(len(self.u)):
            pos = self.u[i] > 0
            out.append(
                AssignedTarget(
                    int(self.l_mask[i]),
                    float(self.l_ctrness[i]),
                    float(self.u[i]),
                    None if self.instance[i] < 0 else int(self.instance[i]),
                    self.offset[i].copy() if pos else None,
                    self.size[i].copy() if pos else None,
                    int(self.angle_bin[i]) if pos else None,
                    float(self.angle_residual[i]) if pos else None,
                    self.shift[i].copy() if self.shift_positive[i] else None,
                )
            )
        return out


def match_points(points: np.ndarray, boxes: Sequence[Box3D]) -> np.ndarray:
    """Instance index containing each point (nearest center on overlap), -1 if none."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(points), -1, dtype=np.int64)
    best_d = np.full(len(points), np.inf)
    for k, box in enumerate(boxes):
        inside = contains_points(box, points)
        d = np.linalg.norm(points - np.asarray(box.center), axis=1)
        take = inside & (d < best_d)
        best[take] = k
        best_d[take] = d[take]
    return best


def assign_targets(
    candidate_xyz: np.ndarray,
    origin_xyz: np.ndarray,
    scene: Scene,
    n_bins: int = DEFAULT_ANGLE_BINS,
    mode: Assignment = Assignment.CENTERNESS,
    iou_threshold: float = 0.55,
) -> TargetBatch:
    """Targets for every candidate plus shift targets for the origins they came from."""
    mode = Assignment(mode)
    cand = np.asarray(candidate_xyz, dtype=np.float64).reshape(-1, 3)
    orig = np.asarray(origin_xyz, dtype=np.float64).reshape(-1, 3)
    m = len(cand)
    boxes = scene.boxes
    inst = match_points(cand, boxes)
    l_mask = (inst >= 0).astype(np.int64)
    ctr = np.zeros(m)
    gt = np.zeros((m, 7))
    for k, box in enumerate(boxes):
        sel = inst == k
        if sel.any():
            ctr[sel] = centerness_batch(cand[sel], box)[1]
            gt[sel] = box.to_array()
    if mode is Assignment.CENTERNESS:
        u = l_mask * ctr
    elif mode is Assignment.MASK:
        u = l_mask.astype(np.float64)
    else:
        # a box of the matched instance's shape placed at the candidate must overlap it enough
        u = np.zeros(m)
        for i in np.flatnonzero(inst >= 0):
            box = boxes[inst[i]]
            moved = Box3D(tuple(cand[i]), box.size, box.yaw)
            u[i] = 1.0 if iou_3d(moved, box) >= iou_threshold else 0.0
    pos = u > 0
    offset = np.where(pos[:, None], gt[:, :3] - cand, 0.0)
    size = np.where(pos[:, None], gt[:, 3:6], 0.0)
    abin, ares = encode_angles(gt[:, 6], n_bins)
    abin = np.where(pos, abin, 0)
    ares = np.where(pos, ares, 0.0)

    o_inst = match_points(orig, boxes)
    shift_pos = o_inst >= 0
    shift = np.zeros((len(orig), 3))
    for k, box in enumerate(boxes):
        sel = o_inst == k
        shift[sel] = np.asarray(box.center) - orig[sel]
    return TargetBatch(l_mask, ctr, u, inst, offset, size, abin, ares, gt, shift, shift_pos)


# ---------------------------------------------------------------- decoding


def decode_arrays(candidate_xyz: np.ndarray, raw: np.ndarray, n_bins: int) -> Tuple[np.ndarray, np.ndarray]:
    """Boxes (M, 7) and scores (M,) from raw head output."""
    raw = np.asarray(raw, dtype=np.float64)
    centers = candidate_xyz + raw[:, 1:4]
    sizes = raw[:, 4:7]
    logits = raw[:, 7 : 7 + n_bins]
    resid = raw[:, 7 + n_bins : 7 + 2 * n_bins]
    b = np.argmax(logits, axis=1)
    yaw = normalize_yaw_array(bin_centers(n_bins)[b] + resid[np.arange(len(b)), b])
    scores = 1.0 / (1.0 + np.exp(-raw[:, 0]))
    return np.concatenate([centers, sizes, yaw[:, None]], axis=1), scores


def decode_boxes(candidate_xyz: np.ndarray, output, n_bins: int = DEFAULT_ANGLE_BINS, class_id: int = 0, return_dropped: bool = False):
    """Detections from candidate locations and head output; non-positive sizes are dropped."""
    raw = output.raw.data if isinstance(output, HeadOutput) else np.asarray(output)
    if isinstance(output, HeadOutput):
        n_bins = output.n_bins
    boxes, scores = decode_arrays(np.asarray(candidate_xyz, dtype=np.float64).reshape(-1, 3), raw, n_bins)
    dets = []
    dropped = 0
    for box, s in zip(boxes, scores):
        if not np.all(box[3:6] > 0) or not np.all(np.isfinite(box)):
            dropped += 1
            continue
        dets.append(Detection(Box3D.from_array(box), class_id, float(np.clip(s, 0.0, 1.0))))
    return (dets, dropped) if return_dropped else dets


def encode_targets_as_output(candidate_xyz: np.ndarray, targets: TargetBatch, n_bins: int, margin: float = 20.0) -> np.ndarray:
    """Raw head output that decodes exactly to the assigned ground truth (positives)."""
    m = len(targets.u)
    raw = np.zeros((m, head_width(n_bins)))
    u = np.clip(targets.u, 1e-12, 1 - 1e-12)
    raw[:, 0] = np.log(u) - np.log1p(-u)
    raw[:, 1:4] = targets.offset
    raw[:, 4:7] = targets.size
    raw[np.arange(m), 7 + targets.angle_bin] = margin
    raw[np.arange(m), 7 + n_bins + targets.angle_bin] = targets.angle_residual
    return raw

"""Training objective: soft-target classification, box regression (distance, size,
binned angle, corners) and the candidate shifting loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Value
from .boxgeom import _CORNER_SIGNS, corners, corners_batch
from .core import Box3D
from .head import CandidateSet, HeadOutput, TargetBatch, bin_centers

EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    smooth_l1_beta: float = 1.0
    corner_norm: str = "l2"

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.smooth_l1_beta > 0:
            raise ValueError("smooth_l1_beta must be positive")
        if self.corner_norm != "l2":
            raise ValueError("only per-corner L2 distance is supported")


def smooth_l1(x: float, beta: float = 1.0) -> float:
    if not beta > 0:
        raise ValueError("beta must be positive")
    ax = abs(x)
    return 0.5 * x * x / beta if ax < beta else ax - 0.5 * beta


def _bce_terms(s: Value, u: np.ndarray) -> Value:
    s = ad.clip(s, EPS, 1.0 - EPS)
    one_minus = 1.0 - s
    return -(ad.log(s) * u + ad.log(one_minus) * (1.0 - u))


def classification_loss(scores, targets) -> Value:
    """Mean soft-target binary cross entropy; scores are clamped to [eps, 1 - eps]."""
    s = ad.as_value(scores)
    u = np.asarray(targets, dtype=np.float64)
    if s.shape != u.shape:
        raise ValueError(f"score/target shape mismatch: {s.shape} vs {u.shape}")
    if u.size == 0:
        raise ValueError("classification loss needs at least one candidate")
    return ad.mean(_bce_terms(s, u))


def angle_loss_terms(bin_logits: Value, residuals: Value, t_bin: np.ndarray, t_res: np.ndarray, beta: float = 1.0) -> Value:
    """Per-row softmax cross-entropy over bins plus smooth-L1 on the target bin's residual."""
    t_bin = np.asarray(t_bin, dtype=np.int64)
    rows = np.arange(len(t_bin))
    ce = -ad.log_softmax(bin_logits, axis=1)[rows, t_bin]
    res = ad.smooth_l1(residuals[rows, t_bin] - np.asarray(t_res, dtype=np.float64), beta)
    return ce + res


def angle_loss(bin_logits, residuals, t_bin, t_res, beta: float = 1.0) -> Value:
    """Angle loss summed over the given rows (one row gives the single-box value)."""
    logits = bin_logits if isinstance(bin_logits, Value) else ad.as_value(np.atleast_2d(bin_logits))
    resid = residuals if isinstance(residuals, Value) else ad.as_value(np.atleast_2d(residuals))
    return ad.vsum(angle_loss_terms(logits, resid, np.atleast_1d(t_bin), np.atleast_1d(t_res), beta))


def corner_loss(pred: Box3D, gt: Box3D) -> float:
    """Sum over the 8 ordered corners of the Euclidean corner distance."""
    return float(np.linalg.norm(corners(pred) - corners(gt), axis=1).sum())


def box_corners_value(center: Value, size: Value, yaw: Value) -> Value:
    """Differentiable corners for M boxes -> (M, 8, 3), same ordering as ``boxgeom.corners``."""
    m = center.shape[0]
    half = ad.reshape(size * 0.5, (m, 1, 3))
    local = half * _CORNER_SIGNS[None]
    lx, ly, lz = local[:, :, 0], local[:, :, 1], local[:, :, 2]
    c = ad.reshape(ad.cos(yaw), (m, 1))
    s = ad.reshape(ad.sin(yaw), (m, 1))
    x = c * lx - s * ly
    y = s * lx + c * ly
    rotated = ad.concat([ad.reshape(x, (m, 8, 1)), ad.reshape(y, (m, 8, 1)), ad.reshape(lz, (m, 8, 1))], axis=2)
    return rotated + ad.reshape(center, (m, 1, 3))


def corner_loss_terms(center: Value, size: Value, yaw: Value, gt_corners: np.ndarray) -> Value:
    pc = box_corners_value(center, size, yaw)
    return ad.vsum(ad.norm(pc - gt_corners, axis=2), axis=1)


@dataclass
class LossBreakdown:
    total: Value
    classification: Value
    regression: Value
    dist: Value
    size: Value
    angle: Value
    corner: Value
    shift: Value
    n_c: int
    n_p: int
    n_p_star: int
    lambda1: float
    lambda2: float

    def record(self) -> Dict[str, float]:
        """Plain-number view in a fixed field order, for logs."""
        f = lambda v: float(v.data)
        return {
            "total": f(self.total),
            "L_c": f(self.classification),
            "L_r": f(self.regression),
            "L_dist": f(self.dist),
            "L_size": f(self.size),
            "L_angle": f(self.angle),
            "L_corner": f(self.corner),
            "L_s": f(self.shift),
            "N_c": self.n_c,
            "N_p": self.n_p,
            "N_p_star": self.n_p_star,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }


def _zero() -> Value:
    return Value(0.0)


def total_loss(output: HeadOutput, candidates: CandidateSet, targets: TargetBatch, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Classification over all valid candidates (mean over N_c), regression over positives
    (mean over N_p) and shifting over positive origins (mean over N_p*), weighted by
    ``lambda1`` and ``lambda2``. Empty positive sets contribute zero."""
    beta = config.smooth_l1_beta
    valid = np.asarray(candidates.valid, dtype=bool)
    vidx = np.flatnonzero(valid)
    n_c = int(vidx.size)
    if n_c == 0:
        raise ValueError("no valid candidates to score")
    scores = ad.sigmoid(ad.reshape(output.score_logit[vidx], (n_c,)))
    l_c = classification_loss(scores, targets.u[vidx])

    pidx = np.flatnonzero(valid & (targets.u > 0))
    n_p = int(pidx.size)
    if n_p:
        cand = candidates.anchor_xyz[pidx]
        off = output.offsets[pidx]
        sz = output.sizes[pidx]
        dist_t = ad.vsum(ad.smooth_l1(off - targets.offset[pidx], beta), axis=1)
        size_t = ad.vsum(ad.smooth_l1(sz - targets.size[pidx], beta), axis=1)
        t_bin = targets.angle_bin[pidx]
        ang_t = angle_loss_terms(output.bin_logits[pidx], output.residuals[pidx], t_bin, targets.angle_residual[pidx], beta)
        rows = np.arange(n_p)
        yaw = output.residuals[pidx][rows, t_bin] + bin_centers(output.n_bins)[t_bin]
        gt_c = corners_batch(targets.gt_boxes[pidx])
        corner_t = corner_loss_terms(off + cand, sz, yaw, gt_c)
        inv = 1.0 / n_p
        l_dist = ad.vsum(dist_t) * inv
        l_size = ad.vsum(size_t) * inv
        l_angle = ad.vsum(ang_t) * inv
        l_corner = ad.vsum(corner_t) * inv
        l_r = l_dist + l_size + l_angle + l_corner
    else:
        l_dist = l_size = l_angle = l_corner = l_r = _zero()

    spos = targets.shift_positive
    sidx = np.flatnonzero(spos)
    n_ps = int(sidx.size)
    if n_ps:
        l_s = ad.vsum(ad.smooth_l1(candidates.shift[sidx] - targets.shift[sidx], beta)) * (1.0 / n_ps)
    else:
        l_s = _zero()

    total = l_c + l_r * config.lambda1 + l_s * config.lambda2
    return LossBreakdown(total, l_c, l_r, l_dist, l_size, l_angle, l_corner, l_s, n_c, n_p, n_ps, config.lambda1, config.lambda2)

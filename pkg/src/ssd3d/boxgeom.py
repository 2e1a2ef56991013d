"""Oriented-box geometry: corners, containment, rotated 3D IoU and greedy NMS."""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .core import Box3D, Detection

AREA_EPS = 1e-12

# bottom face counter-clockwise seen from above, starting at (+l/2, +w/2); top face repeats it
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=np.float64,
)


def corners(box: Box3D) -> np.ndarray:
    """The 8 corners of ``box`` as an (8, 3) array in the fixed ordering."""
    local = _CORNER_SIGNS * (0.5 * np.asarray(box.size))
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    out = np.empty_like(local)
    out[:, 0] = c * local[:, 0] - s * local[:, 1]
    out[:, 1] = s * local[:, 0] + c * local[:, 1]
    out[:, 2] = local[:, 2]
    return out + np.asarray(box.center)


def corners_batch(boxes: np.ndarray) -> np.ndarray:
    """Vectorised ``corners`` for an (M, 7) box array -> (M, 8, 3)."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 7)
    local = _CORNER_SIGNS[None] * (0.5 * boxes[:, None, 3:6])
    c = np.cos(boxes[:, 6])[:, None]
    s = np.sin(boxes[:, 6])[:, None]
    out = np.empty_like(local)
    out[..., 0] = c * local[..., 0] - s * local[..., 1]
    out[..., 1] = s * local[..., 0] + c * local[..., 1]
    out[..., 2] = local[..., 2]
    return out + boxes[:, None, :3]


def to_box_frame(box: Box3D, points: np.ndarray) -> np.ndarray:
    """Express world points in the box frame (translate by -center, rotate by -yaw)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) - np.asarray(box.center)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] + s * p[:, 1]
    out[:, 1] = -s * p[:, 0] + c * p[:, 1]
    out[:, 2] = p[:, 2]
    return out


def contains_points(box: Box3D, points: np.ndarray) -> np.ndarray:
    """Boolean mask of points inside ``box``; the boundary counts as inside."""
    local = to_box_frame(box, points)
    half = 0.5 * np.asarray(box.size)
    return np.all(np.abs(local) <= half, axis=1)


def contains(box: Box3D, point) -> bool:
    return bool(contains_points(box, np.asarray(point, dtype=np.float64).reshape(1, 3))[0])


def footprint(box: Box3D) -> np.ndarray:
    """Counter-clockwise bird's-eye polygon of the box, shape (4, 2)."""
    return corners(box)[:4, :2]


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by a counter-clockwise convex ``clipper``."""
    output = [tuple(p) for p in subject]
    n = len(clipper)
    for k in range(n):
        if not output:
            break
        ax, ay = clipper[k - 1]
        bx, by = clipper[k]
        ex, ey = bx - ax, by - ay
        inputs, output = output, []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    output.append(_cross_point(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0.0:
                output.append(_cross_point(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    fa, fb = footprint(a), footprint(b)
    # cheap reject on circumscribed circles
    ra = 0.5 * np.hypot(a.size[0], a.size[1])
    rb = 0.5 * np.hypot(b.size[0], b.size[1])
    if np.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1]) > ra + rb:
        return 0.0
    area = polygon_area(clip_convex(fa, fb))
    return 0.0 if area < AREA_EPS else area


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Rotated 3D IoU: footprint intersection area times vertical overlap."""
    top = min(a.center[2] + 0.5 * a.size[2], b.center[2] + 0.5 * b.size[2])
    bottom = max(a.center[2] - 0.5 * a.size[2], b.center[2] - 0.5 * b.size[2])
    height = top - bottom
    if height <= 0.0:
        return 0.0
    area = bev_intersection_area(a, b)
    if area <= 0.0:
        return 0.0
    inter = area * height
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def iou_matrix(boxes_a: Sequence[Box3D], boxes_b: Sequence[Box3D]) -> np.ndarray:
    out = np.zeros((len(boxes_a), len(boxes_b)))
    for i, a in enumerate(boxes_a):
        for j, b in enumerate(boxes_b):
            out[i, j] = iou_3d(a, b)
    return out


def nms(dets: Sequence[Detection], iou_threshold: float, max_out: int = 100) -> List[Detection]:
    """Greedy score-descending suppression; equal scores keep input order."""
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou_threshold must lie in [0, 1]")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    keep: List[Detection] = []
    for i in order:
        if len(keep) >= max_out:
            break
        d = dets[i]
        if all(iou_3d(d.box, k.box) <= iou_threshold for k in keep):
            keep.append(d)
    return keep

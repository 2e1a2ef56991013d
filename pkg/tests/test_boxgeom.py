import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_nms, corners_by_hand, grid_iou
from ssd3d.boxgeom import (
    clip_convex,
    contains,
    contains_points,
    corners,
    corners_batch,
    iou_3d,
    iou_matrix,
    nms,
    polygon_area,
)
from ssd3d.core import Box3D, Detection

coord = st.floats(-5, 5)
extent = st.floats(0.2, 4)
angle = st.floats(-math.pi, math.pi)


@st.composite
def boxes(draw):
    return Box3D((draw(coord), draw(coord), draw(st.floats(-1, 1))), (draw(extent), draw(extent), draw(extent)), draw(angle))


def test_corners_axis_aligned_cube():
    got = corners(Box3D((0, 0, 0), (2, 2, 2)))
    assert sorted(map(tuple, got)) == sorted(itertools.product((-1.0, 1.0), repeat=3))


def test_corners_rotated_first_corner():
    got = corners(Box3D((0, 0, 0), (2, 4, 2), math.pi / 2))
    assert np.allclose(got[0], (-2, 1, -1), atol=1e-12)


@given(boxes())
def test_corners_match_hand_rotation(b):
    assert np.allclose(corners(b), corners_by_hand(b.center, b.size, b.yaw), atol=1e-12)
    assert np.allclose(corners_batch(b.to_array()[None])[0], corners(b), atol=1e-12)


@given(boxes())
def test_corners_periodic_in_yaw(b):
    shifted = Box3D(b.center, b.size, b.yaw + 2 * math.pi)
    assert np.allclose(corners(b), corners(shifted), atol=1e-9)


@given(boxes())
def test_box_contains_its_corners(b):
    # corners sit on the boundary; allow the rotation round-off of one ulp-scale shrink
    shrunk = b.center + (corners(b) - np.asarray(b.center)) * (1 - 1e-12)
    assert contains_points(b, shrunk).all()


def test_contains_examples():
    cube = Box3D((0, 0, 0), (1, 1, 1))
    assert contains(cube, (0, 0, 0))
    assert contains(cube, (0.5, 0, 0))
    assert not contains(Box3D((0, 0, 0), (2, 1, 1), math.pi / 2), (0.9, 0, 0))


def test_polygon_clip_squares():
    sq = np.array([[0, 0], [2, 0], [2, 2], [0, 2]], float)
    other = sq + 1.0
    assert polygon_area(clip_convex(sq, other)) == pytest.approx(1.0)
    assert polygon_area(clip_convex(sq, sq + 5.0)) == 0.0


def test_iou_examples():
    a = Box3D((0, 0, 0), (1, 1, 1))
    assert iou_3d(a, a) == pytest.approx(1.0, abs=1e-12)
    assert iou_3d(a, Box3D((3, 0, 0), (1, 1, 1))) == 0.0
    assert iou_3d(a, Box3D((0.5, 0, 0), (1, 1, 1))) == pytest.approx(1 / 3, abs=1e-12)
    assert iou_3d(a, Box3D((0, 0, 2), (1, 1, 1))) == 0.0


def test_iou_rotated_pair_matches_grid_oracle():
    a = Box3D((0.1, -0.2, 0.0), (3.0, 1.5, 1.2), 0.4)
    b = Box3D((0.6, 0.3, 0.2), (2.5, 1.8, 1.0), -0.7)
    assert iou_3d(a, b) == pytest.approx(grid_iou(a, b, 200), abs=2e-3)


def test_grid_oracle_converges_on_generic_boxes():
    # coarse grids miss by a few 1e-3 on small boxes; refining must close the gap
    rng = np.random.default_rng(7)
    for _ in range(20):
        a = Box3D(tuple(rng.uniform(-1, 1, 3)), tuple(rng.uniform(1, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
        b = Box3D(tuple(rng.uniform(-1.5, 1.5, 3)), tuple(rng.uniform(1, 4, 3)), float(rng.uniform(-np.pi, np.pi)))
        assert abs(iou_3d(a, b) - grid_iou(a, b, 1000)) < 1e-3


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou_3d(a, b)
    assert 0.0 <= v <= 1.0
    assert abs(v - iou_3d(b, a)) <= 1e-12


@given(boxes(), boxes(), angle, coord, coord, coord)
def test_iou_rigid_motion_invariant(a, b, theta, tx, ty, tz):
    c, s = math.cos(theta), math.sin(theta)

    def move(box):
        x, y, z = box.center
        return Box3D((c * x - s * y + tx, s * x + c * y + ty, z + tz), box.size, box.yaw + theta)

    assert abs(iou_3d(a, b) - iou_3d(move(a), move(b))) < 1e-9


def test_iou_matrix_shape():
    bs = [Box3D((i, 0, 0), (1, 1, 1)) for i in range(3)]
    m = iou_matrix(bs, bs[:2])
    assert m.shape == (3, 2) and m[0, 0] == pytest.approx(1.0)


def _det(x, score, yaw=0.0):
    return Detection(Box3D((x, 0, 0), (2, 1, 1), yaw), 0, score)


def test_nms_identical_pair():
    out = nms([_det(0, 0.8), _det(0, 0.9)], 0.5, 10)
    assert len(out) == 1 and out[0].score == 0.9


def test_nms_disjoint_all_survive():
    dets = [_det(5 * i, 0.1 * (i + 1)) for i in range(4)]
    assert len(nms(dets, 0.1, 10)) == 4


def test_nms_chain_matches_bruteforce():
    rng = np.random.default_rng(3)
    for _ in range(30):
        n = int(rng.integers(2, 7))
        dets = [_det(float(x), float(s), float(y)) for x, s, y in zip(np.cumsum(rng.uniform(0.2, 1.5, n)), rng.uniform(0, 1, n), rng.uniform(-0.5, 0.5, n))]
        for thr in (0.1, 0.3, 0.5):
            want = [dets[i] for i in brute_nms(dets, thr, iou_3d)]
            assert nms(dets, thr, 10) == want


@given(st.lists(st.tuples(st.floats(-4, 4), st.floats(0, 1), angle), min_size=1, max_size=8), st.floats(0.05, 0.9))
def test_nms_properties(spec, thr):
    dets = [_det(x, s, y) for x, s, y in spec]
    out = nms(dets, thr, 100)
    scores = [d.score for d in out]
    assert scores == sorted(scores, reverse=True)
    for a, b in itertools.combinations(out, 2):
        assert iou_3d(a.box, b.box) <= thr


def test_nms_max_out_and_threshold_validation():
    dets = [_det(5 * i, 0.5) for i in range(5)]
    assert len(nms(dets, 0.5, 2)) == 2
    with pytest.raises(ValueError):
        nms(dets, 1.5)

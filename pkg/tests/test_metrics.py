import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import envelope_ap, greedy_match
from ssd3d.boxgeom import iou_3d
from ssd3d.core import Box3D, Detection, Instance, PointCloud, Scene
from ssd3d.metrics import ap_from_pr, average_precision, evaluate, match, nds, precision_recall, tp_errors, yaw_error

G1 = Box3D((0, 0, 0), (4, 2, 1.5), 0.0)
G2 = Box3D((10, 0, 0), (4, 2, 1.5), 0.5)


def det(box, score, shift=(0, 0, 0)):
    return Detection(Box3D(tuple(np.add(box.center, shift)), box.size, box.yaw), 0, score)


def test_match_examples():
    r = match([det(G1, 0.9), det(G2, 0.8)], [G1, G2], 0.7)
    assert r.tp.tolist() == [True, True] and r.detected.all()
    r = match([det(G1, 0.9), det(G1, 0.8)], [G1], 0.7)
    assert r.tp.tolist() == [True, False]
    with pytest.raises(ValueError):
        match([], [G1], 0.0)


def test_match_threshold_is_inclusive():
    # a shift of 0.8 m along a 4 m box leaves IoU exactly 3.2 / 4.8 = 2/3
    d = det(G1, 0.9, (0.8, 0, 0))
    v = iou_3d(d.box, G1)
    assert match([d], [G1], v).tp[0]


def test_match_ties_keep_input_order():
    r = match([det(G1, 0.5), det(G1, 0.5)], [G1], 0.5)
    assert r.tp.tolist() == [True, False]


def test_match_mixed_scene_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gts = [Box3D((x, y, 0), (4, 2, 1.5), yaw) for x, y, yaw in rng.uniform(-3, 3, (3, 3))]
        dets = [det(gts[rng.integers(3)], float(rng.uniform()), tuple(rng.normal(0, 0.6, 3))) for _ in range(5)]
        want = greedy_match(dets, gts, 0.5, iou_3d)
        assert match(dets, gts, 0.5).tp.tolist() == want


def test_ap_examples():
    assert average_precision([[det(G1, 0.9), det(G2, 0.8)]], [[G1, G2]], 0.7) == 1.0
    assert average_precision([[]], [[G1, G2]], 0.7) == 0.0
    with pytest.raises(ValueError):
        average_precision([[det(G1, 0.9)]], [[]], 0.7)


def test_ap_interleaved_matches_hand_envelope():
    # TP FP TP TP in score order, 4 instances
    p, r = precision_recall(np.array([0.9, 0.8, 0.7, 0.6]), np.array([1, 0, 1, 1], bool), 4)
    want = 0.25 * 1.0 + 0.25 * 0.75 + 0.25 * 0.75
    assert ap_from_pr(p, r) == pytest.approx(want)
    assert envelope_ap([1, 0, 1, 1], 4) == pytest.approx(want)


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(0, 10))
def test_ap_matches_envelope_oracle(flags, extra_gt):
    n_gt = max(1, sum(flags) + extra_gt)
    scores = np.linspace(1, 0.01, len(flags))
    p, r = precision_recall(scores, np.array(flags), n_gt)
    assert ap_from_pr(p, r) == pytest.approx(envelope_ap(flags, n_gt), abs=1e-12)


@given(st.lists(st.booleans(), min_size=2, max_size=30))
def test_ap_does_not_drop_when_fp_removed(flags):
    if all(flags):
        return
    n_gt = sum(flags) + 1
    scores = np.linspace(1, 0.01, len(flags))
    p, r = precision_recall(scores, np.array(flags), n_gt)
    base = ap_from_pr(p, r)
    i = flags.index(False)
    keep = [k for k in range(len(flags)) if k != i]
    p2, r2 = precision_recall(scores[keep], np.array(flags)[keep], n_gt)
    assert ap_from_pr(p2, r2) >= base - 1e-12


def test_sampled_ap_variants():
    p, r = precision_recall(np.array([0.9, 0.8]), np.array([True, True]), 2)
    assert ap_from_pr(p, r, 11) == pytest.approx(1.0)
    assert ap_from_pr(p, r, 40) == pytest.approx(1.0)


def test_nds_examples():
    assert nds(0.295, 0.54, 0.29, 0.45, 0.29, 0.41) == pytest.approx(0.4495, abs=1e-12)
    assert nds(1, 0, 0, 0, 0, 0) == 1.0
    # the hand sum of this row is (5 * 0.426 + 3.54) / 10 = 0.567
    assert nds(0.426, 0.39, 0.29, 0.44, 0.22, 0.12) == pytest.approx(0.567, abs=1e-12)
    with pytest.raises(ValueError):
        nds(1.5, 0, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        nds(0.5, -1, 0, 0, 0, 0)


@given(st.floats(0, 1), st.floats(0, 1), *[st.floats(0, 5)] * 5)
def test_nds_linear_in_map_and_clamped(a, b, e1, e2, e3, e4, e5):
    errs = (e1, e2, e3, e4, e5)
    assert nds(a, *errs) - nds(b, *errs) == pytest.approx(0.5 * (a - b), abs=1e-12)
    clamped = tuple(min(e, 1.0) for e in errs)
    assert nds(a, *errs) == pytest.approx(nds(a, *clamped), abs=1e-15)
    assert 0.0 <= nds(a, *errs) <= 1.0


def test_yaw_error_periods():
    assert yaw_error(3.1, -3.1) == pytest.approx(2 * math.pi - 6.2)
    assert yaw_error(0.1, 0.1 + math.pi, math.pi) == pytest.approx(0.0, abs=1e-12)
    assert yaw_error(0.0, math.pi / 2, math.pi) == pytest.approx(math.pi / 2)


def test_tp_errors_and_evaluate():
    d = det(G1, 0.9, (0.3, 0.4, 0))
    e = tp_errors([[d]], [[G1]], 0.5)
    assert e.mATE == pytest.approx(0.5) and e.mASE == pytest.approx(0) and e.mAOE == 0
    assert tp_errors([[]], [[G1]], 0.5).as_tuple() == (1.0, 1.0, 1.0, 0.0, 0.0)
    scene = Scene(PointCloud(np.zeros((1, 3))), (Instance(G1, 0, ()),))
    rep = evaluate([[d]], [scene], (0.5, 0.7), {0: "car"}, 0.5)
    out = rep.to_dict()
    assert list(out)[:3] == ["ap", "mAP", "NDS"]
    assert out["ap"]["car"]["AP@0.5"] == 1.0
    assert out["NDS"] == pytest.approx(nds(1.0, 0.5, 0, 0, 0, 0))

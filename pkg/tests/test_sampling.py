import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ssd3d.core import Box3D, Instance, PointCloud, Scene
from ssd3d.sampling import (
    Origin,
    SampleResult,
    SamplingConfig,
    Strategy,
    fps,
    fps_indices,
    fps_reference,
    fusion_sample,
    pairwise_criterion,
    points_recall,
    recall_grid,
    row_label,
)


def test_pairwise_criterion_examples():
    assert pairwise_criterion((0, 0, 0), (3, 4, 0), (1, 0), (0, 1), 1.0) == pytest.approx(5 + math.sqrt(2))
    assert pairwise_criterion((1, 2, 3), (1, 2, 3), (4, 5), (4, 5), 7.0) == 0.0
    assert pairwise_criterion((0, 0, 0), (9, 9, 9), (0, 0), (3, 4), 0.0) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        pairwise_criterion((0, 0, 0), (1, 1, 1), (1,), (1, 2), 1.0)


def test_dfps_small_examples():
    cloud = PointCloud([[0, 0, 0], [1, 0, 0], [4, 0, 0]])
    assert fps(cloud, SamplingConfig(2)).indices.tolist() == [0, 2]
    assert fps(cloud, SamplingConfig(3)).indices.tolist() == [0, 2, 1]


def test_ffps_random_cloud_matches_reference():
    rng = np.random.default_rng(0)
    xyz, f = rng.normal(size=(8, 3)), rng.normal(size=(8, 4))
    got = fps(PointCloud(xyz, features=f), SamplingConfig(4, 1.0, Strategy.FFPS)).indices
    assert got.tolist() == fps_reference(xyz, f, 1.0, 4).tolist()


def test_fps_errors():
    cloud = PointCloud(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        fps(cloud, SamplingConfig(4))
    with pytest.raises(ValueError):
        fps(cloud, SamplingConfig(2, 1.0, Strategy.FFPS))
    with pytest.raises(ValueError):
        SamplingConfig(3, strategy=Strategy.FUSION)
    with pytest.raises(ValueError):
        fps(cloud, SamplingConfig(2, start_index=5))


def test_ties_go_to_lowest_index():
    # all points coincide: every remaining candidate ties at distance 0
    cloud = PointCloud(np.zeros((5, 3)))
    assert fps(cloud, SamplingConfig(5, start_index=2)).indices.tolist() == [2, 0, 1, 3, 4]


clouds = st.integers(2, 40).flatmap(
    lambda n: st.tuples(
        hnp.arrays(np.float64, (n, 3), elements=st.floats(-10, 10)),
        hnp.arrays(np.float64, (n, 2), elements=st.floats(-3, 3)),
        st.integers(1, n),
        st.sampled_from([0.0, 0.5, 1.0, 2.0]),
    )
)


@given(clouds)
def test_fps_matches_reference_property(args):
    xyz, f, k, lam = args
    cloud = PointCloud(xyz, features=f)
    d = fps_indices(cloud, k, Strategy.DFPS)
    assert d.tolist() == fps_reference(xyz, None, 1.0, k).tolist()
    ff = fps_indices(cloud, k, Strategy.FFPS, lam)
    assert ff.tolist() == fps_reference(xyz, f, lam, k).tolist()
    assert len(set(ff.tolist())) == k


@given(clouds)
def test_full_budget_is_permutation(args):
    xyz, f, _, lam = args
    n = len(xyz)
    out = fps_indices(PointCloud(xyz, features=f), n, Strategy.FFPS, lam)
    assert sorted(out.tolist()) == list(range(n))


@given(clouds, st.floats(0.1, 50))
def test_ffps_lambda_zero_invariant_to_feature_scale(args, scale):
    xyz, f, k, _ = args
    a = fps_indices(PointCloud(xyz, features=f), k, Strategy.FFPS, 0.0)
    b = fps_indices(PointCloud(xyz, features=f * 4.0), k, Strategy.FFPS, 0.0)
    assert a.tolist() == b.tolist()


def test_dfps_invariant_under_rigid_motion():
    rng = np.random.default_rng(5)
    xyz = rng.uniform(-10, 10, (60, 3))
    theta = 0.7
    rot = np.array([[math.cos(theta), -math.sin(theta), 0], [math.sin(theta), math.cos(theta), 0], [0, 0, 1]])
    moved = xyz @ rot.T + np.array([3.0, -2.0, 1.0])
    a = fps_indices(PointCloud(xyz), 30, Strategy.DFPS)
    b = fps_indices(PointCloud(moved), 30, Strategy.DFPS)
    assert a.tolist() == b.tolist()


def test_fusion_blocks_match_single_runs():
    rng = np.random.default_rng(1)
    xyz = np.concatenate([rng.normal(0, 0.5, (20, 3)), rng.normal(8, 0.5, (20, 3))])
    f = rng.normal(size=(40, 3))
    cloud = PointCloud(xyz, features=f)
    res = fusion_sample(cloud, SamplingConfig(10, 1.0, Strategy.FUSION))
    assert res.origin.tolist() == [Origin.FROM_FFPS] * 5 + [Origin.FROM_DFPS] * 5
    assert res.ffps_indices.tolist() == fps_reference(xyz, f, 1.0, 5).tolist()
    assert res.dfps_indices.tolist() == fps_reference(xyz, None, 1.0, 5).tolist()


def test_fusion_constant_features_halves_agree():
    rng = np.random.default_rng(2)
    cloud = PointCloud(rng.normal(size=(30, 3)), features=np.ones((30, 4)))
    res = fps(cloud, SamplingConfig(12, 1.0, Strategy.FUSION))
    assert res.ffps_indices.tolist() == res.dfps_indices.tolist()


def test_fusion_full_budget_keeps_duplicates():
    rng = np.random.default_rng(4)
    cloud = PointCloud(rng.normal(size=(6, 3)), features=rng.normal(size=(6, 2)))
    res = fps(cloud, SamplingConfig(6, 1.0, Strategy.FUSION))
    assert len(res) == 6
    both = set(res.ffps_indices.tolist()) | set(res.dfps_indices.tolist())
    assert both == set(fps_reference(cloud.xyz, cloud.features, 1.0, 3).tolist()) | set(fps_reference(cloud.xyz, None, 1.0, 3).tolist())


def _two_instance_scene():
    xyz = np.array([[0, 0, 0], [0.1, 0, 0], [5, 5, 0], [9, 9, 9]], float)
    insts = (Instance(Box3D((0, 0, 0), (1, 1, 1)), 0, (0, 1)), Instance(Box3D((5, 5, 0), (1, 1, 1)), 0, (2,)))
    return Scene(PointCloud(xyz), insts)


def test_points_recall_examples():
    s = _two_instance_scene()
    assert points_recall([s], [np.array([0, 2])]) == 1.0
    assert points_recall([s], [SampleResult(np.array([1, 3]), np.zeros(2, np.int8))]) == 0.5
    with pytest.raises(ValueError):
        points_recall([Scene(PointCloud(np.zeros((2, 3))))], [np.array([0])])
    with pytest.raises(ValueError):
        points_recall([s], [])


def test_recall_grid_prefix_equals_direct_runs():
    rng = np.random.default_rng(7)
    xyz = rng.uniform(-5, 5, (50, 3))
    f = rng.normal(size=(50, 3))
    insts = (Instance(Box3D((0, 0, 0), (6, 6, 6)), 0, tuple(np.flatnonzero(np.all(np.abs(xyz) <= 3, axis=1)).tolist())),)
    scene = Scene(PointCloud(xyz, features=f), insts)
    rows, timing = recall_grid([scene], [(Strategy.FFPS, 1.0), (Strategy.FUSION, 1.0)], [4, 10, 50])
    assert set(timing) == {row_label(Strategy.FFPS, 1.0), row_label(Strategy.FUSION, 1.0)}
    for r in rows:
        res = fps(scene.cloud, SamplingConfig(r.budget, 1.0, Strategy(r.strategy)))
        assert r.recall == points_recall([scene], [res])
    # fusion at full budget keeps duplicates, so only single-strategy rows cover every point
    assert all(r.recall == 1.0 for r in rows if r.budget == 50 and r.strategy == "FFPS")

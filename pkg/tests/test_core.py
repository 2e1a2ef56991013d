import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssd3d.core import Box3D, Detection, Instance, PointCloud, Scene, normalize_yaw, normalize_yaw_array, validate_scene

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@pytest.mark.parametrize(
    "theta, expected",
    [(0.0, 0.0), (2 * math.pi, 0.0), (-3 * math.pi / 2, math.pi / 2), (math.pi, -math.pi), (-math.pi, -math.pi)],
)
def test_normalize_yaw_examples(theta, expected):
    assert normalize_yaw(theta) == pytest.approx(expected, abs=1e-12)


def test_normalize_yaw_rejects_nan():
    with pytest.raises(ValueError):
        normalize_yaw(float("nan"))


@given(finite)
def test_normalize_yaw_idempotent_and_in_range(x):
    y = normalize_yaw(x)
    assert -math.pi <= y < math.pi
    assert normalize_yaw(y) == y
    assert math.isclose(math.cos(y), math.cos(x), abs_tol=1e-6)
    assert math.isclose(math.sin(y), math.sin(x), abs_tol=1e-6)


def test_normalize_yaw_array_agrees():
    xs = np.linspace(-20, 20, 401)
    out = normalize_yaw_array(xs)
    assert np.all((out >= -math.pi) & (out < math.pi))
    assert np.allclose(out, [normalize_yaw(x) for x in xs], atol=1e-12)


def test_box_validation_and_canonical_yaw():
    b = Box3D((0, 0, 0), (1, 2, 3), 3 * math.pi)
    assert b.yaw == pytest.approx(-math.pi)
    assert b.volume == 6.0
    with pytest.raises(ValueError):
        Box3D((0, 0, 0), (1, 0, 1))
    with pytest.raises(ValueError):
        Box3D((0, float("inf"), 0), (1, 1, 1))
    assert Box3D.from_array(b.to_array()) == b


def test_point_cloud_shapes_and_immutability():
    c = PointCloud(np.zeros((4, 3)), reflectance=np.ones(4), features=np.zeros((4, 2)))
    assert len(c) == 4
    with pytest.raises(ValueError):
        c.xyz[0, 0] = 1.0
    with pytest.raises(AttributeError):
        c.xyz = np.ones((4, 3))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), reflectance=np.ones(3))
    with pytest.raises(ValueError):
        PointCloud(np.zeros((4, 3)), features=np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PointCloud([[0, 0, float("nan")]])
    assert c.raw_channels().shape == (4, 4)
    sub = c.subset([1, 1, 2])
    assert len(sub) == 3 and sub.features.shape == (3, 2)


def test_detection_score_range():
    with pytest.raises(ValueError):
        Detection(Box3D((0, 0, 0), (1, 1, 1)), 0, 1.5)


def _scene():
    xyz = np.array([[0, 0, 0], [0.2, 0.1, 0.0], [5, 5, 5]], dtype=float)
    box = Box3D((0, 0, 0), (1, 1, 1))
    return xyz, box


def test_validate_scene_well_formed_is_empty():
    xyz, box = _scene()
    report = validate_scene(Scene(PointCloud(xyz), (Instance(box, 0, (0, 1)),)))
    assert report.ok and len(report) == 0 and not report


def test_validate_scene_index_outside_box_is_one_violation():
    xyz, box = _scene()
    report = validate_scene(Scene(PointCloud(xyz), (Instance(box, 0, (0, 2)),)))
    assert len(report) == 1
    assert list(report)[0].kind == "index_outside_box"


def test_validate_scene_nan_is_one_violation():
    xyz, box = _scene()
    xyz[2, 1] = np.nan
    report = validate_scene(Scene(PointCloud(xyz, check_finite=False), (Instance(box, 0, (0, 1)),)))
    assert [v.kind for v in report] == ["non_finite_point"]


def test_validate_scene_other_violations():
    xyz, box = _scene()
    cloud = PointCloud(xyz, reflectance=[0.5, 1.5, 0.2])
    report = validate_scene(Scene(cloud, (Instance(box, 0, (0, 0, 7)),)))
    kinds = sorted(v.kind for v in report)
    assert kinds == ["duplicate_index", "index_range", "reflectance_range"]

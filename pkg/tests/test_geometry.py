import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from videoguide.errors import ConfigurationError, DomainError
from videoguide.geometry import (CameraModel, DepthMap, PointCloud, Pose6D, SegMask, TriMesh, backproject, chamfer,
                                 iou, mask_iou, project, project_points, quat_from_rotvec, quat_to_rotvec)
from videoguide.render import rasterize
from videoguide.sim import SimState

from conftest import cube_scene, small_camera

floats = st.floats(-3, 3, allow_nan=False)
vec3 = st.tuples(floats, floats, floats)
rotvecs = st.tuples(*[st.floats(-3, 3)] * 3)


def pose_from(p, r):
    return Pose6D.from_rotvec(np.array(p), np.array(r))


@given(vec3, rotvecs)
def test_pose_quaternion_is_unit_with_nonnegative_w(p, r):
    q = pose_from(p, r).orientation
    assert abs(np.linalg.norm(q) - 1) < 1e-6
    assert q[0] >= 0


@given(vec3, rotvecs, vec3, rotvecs, vec3, rotvecs)
def test_pose_composition_is_associative(p1, r1, p2, r2, p3, r3):
    a, b, c = pose_from(p1, r1), pose_from(p2, r2), pose_from(p3, r3)
    left, right = (a @ b) @ c, a @ (b @ c)
    assert np.allclose(left.position, right.position, atol=1e-9)
    assert np.allclose(left.orientation, right.orientation, atol=1e-9)


@given(vec3, rotvecs)
def test_pose_inverse_round_trip(p, r):
    a = pose_from(p, r)
    e = a @ a.inverse()
    assert np.allclose(e.position, 0, atol=1e-9)
    assert e.rotation_error(Pose6D.identity()) < 1e-6


@given(st.tuples(*[st.floats(-3.1, 3.1)] * 3))
def test_rotvec_round_trip(r):
    r = np.array(r)
    if np.linalg.norm(r) >= math.pi - 1e-6:
        return
    assert np.allclose(quat_to_rotvec(quat_from_rotvec(r)), r, atol=1e-9)


def test_camera_rejects_bad_intrinsics():
    with pytest.raises(ConfigurationError):
        CameraModel(0, 100, 64, 64, 128, 128)
    with pytest.raises(ConfigurationError):
        CameraModel(100, 100, 128, 64, 128, 128)


def test_project_optical_axis():
    cam = small_camera()
    p = project([0, 0, 2], cam)
    assert (p.u, p.v, p.depth, p.in_frustum) == (64, 64, 2.0, True)


def test_project_camera_origin_is_out_of_frustum():
    assert not project([0, 0, 0], small_camera()).in_frustum


def test_project_offset_point():
    assert project([0.5, 0, 2], small_camera()).u == pytest.approx(89.0)


@given(st.floats(0.2, 10), st.integers(0, 127), st.integers(0, 127))
def test_project_backproject_identity(z, row, col):
    cam = CameraModel(100, 100, 64, 64, 128, 128, Pose6D.from_rotvec([0.1, -0.2, 0.3], [0.2, 0.1, -0.3]))
    vals = np.zeros((128, 128), np.float32)
    vals[row, col] = z
    pts = backproject(DepthMap.from_array(vals), vals > 0, None, cam).points
    uvz = project_points(pts, cam)[0]
    assert np.allclose(uvz, [col, row, np.float32(z)], atol=1e-6)


def test_backproject_empty_mask_gives_empty_cloud():
    cam = small_camera()
    d = DepthMap.from_array(np.ones((128, 128), np.float32))
    assert backproject(d, SegMask.empty(128, 128), 1, cam).is_empty


def test_backproject_constant_depth_is_planar():
    cam = small_camera()
    d = DepthMap.from_array(np.full((128, 128), 1.5, np.float32))
    pts = backproject(d, np.ones((128, 128), bool), None, cam).points
    assert np.abs(pts[:, 2] - 1.5).max() < 1e-6


def test_backproject_cube_render_matches_surface():
    scene = cube_scene()
    obs = rasterize(SimState.initial(scene), scene)
    cloud = backproject(obs.depth, obs.seg, 1, scene.camera)
    # analytic visible face z = 1.5, |x|,|y| <= 0.5
    g = np.linspace(-0.5, 0.5, 101)
    xx, yy = np.meshgrid(g, g)
    face = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, 1.5)], 1)
    assert chamfer(cloud, face) < 2 * scene.camera.pixel_footprint(1.5)


def test_iou_examples():
    a = np.zeros((20, 20), bool)
    a[0:10, 0:10] = True
    b = np.zeros((20, 20), bool)
    b[0:10, 5:15] = True
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, ~a) == 0.0
    assert mask_iou(a, b) == pytest.approx(50 / 150)
    assert iou(SegMask.from_bool(a, 3), SegMask.from_bool(b, 3), 3) == pytest.approx(1 / 3)


def test_iou_both_empty_is_one():
    z = np.zeros((4, 4), bool)
    assert mask_iou(z, z) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ConfigurationError):
        mask_iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_chamfer_examples(rng):
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == 1.0
    pts = rng.random((100, 3))
    assert chamfer(pts, pts) == 0.0
    assert chamfer(pts, pts + [0.01, 0, 0]) <= 0.01 + 1e-12


def test_chamfer_empty_is_domain_error():
    with pytest.raises(DomainError):
        chamfer(np.zeros((0, 3)), np.zeros((2, 3)))


@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2 ** 31))
def test_chamfer_matches_brute_force(n, m, seed):
    r = np.random.default_rng(seed)
    a, b = r.normal(size=(n, 3)), r.normal(size=(m, 3))
    d = cdist(a, b)
    assert abs(chamfer(a, b) - 0.5 * (d.min(1).mean() + d.min(0).mean())) < 1e-9


def test_depth_and_segm_file_round_trip(tmp_path):
    vals = np.arange(12, dtype=np.float32).reshape(3, 4)
    vals[0, 0] = np.nan
    d = DepthMap.from_array(vals)
    d.save(tmp_path / "a.dpth")
    assert DepthMap.load(tmp_path / "a.dpth") == d
    s = SegMask(np.arange(12).reshape(3, 4))
    s.save(tmp_path / "a.segm")
    assert SegMask.load(tmp_path / "a.segm") == s


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(DomainError):
        PointCloud([[0, 0, np.inf]])


def test_box_mesh_surface_samples_lie_on_faces(rng):
    pts = TriMesh.box([0.2, 0.4, 0.6]).sample_surface(500, rng)
    half = np.array([0.1, 0.2, 0.3])
    assert np.all(np.abs(pts) <= half + 1e-12)
    assert np.all(np.isclose(np.abs(pts), half).any(axis=1))

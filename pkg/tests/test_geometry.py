"""Camera model, pose parametrization and projection against matrix oracles."""

import math

import numpy as np
import pytest

from ganvo.engine import Tensor
from ganvo.engine.gradcheck import max_relative_error
from ganvo.errors import ConfigError, NumericError, ShapeError
from ganvo.geometry import (
    CameraIntrinsics,
    DepthMap,
    PoseVec6,
    disparity_to_depth,
    euler_to_rotation,
    matrix_to_pose_vec,
    pose_vec_to_matrix,
    project_pixels,
    project_points,
    rot_x,
    rot_y,
    rot_z,
    rotation_to_quaternion,
    se3_inverse,
    se3_matrix,
    validate_se3,
)


def toy_intrinsics(width=6, height=6, fx=5.0, fy=5.0):
    return CameraIntrinsics(fx, fy, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


# -- intrinsics ----------------------------------------------------------------


def test_intrinsics_matrix_and_inverse():
    K = CameraIntrinsics(100.0, 120.0, 30.0, 40.0, 64, 80)
    np.testing.assert_allclose(K.matrix() @ K.inverse_matrix(), np.eye(3), atol=1e-14)


def test_intrinsics_validation():
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(ConfigError):
        CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 1, 10)


def test_intrinsics_proportional_rescale():
    K = CameraIntrinsics(718.856, 718.856, 607.1928, 185.2157, 1241, 376)
    Ks = K.scaled(416, 128)
    assert Ks.fx == pytest.approx(718.856 * 416 / 1241)
    assert Ks.cy == pytest.approx(185.2157 * 128 / 376)
    # a fixed 3D point projects to proportionally scaled pixel coordinates
    X = np.array([2.0, 1.0, 10.0])
    p = K.matrix() @ X
    ps = Ks.matrix() @ X
    assert ps[0] / ps[2] == pytest.approx(p[0] / p[2] * 416 / 1241, abs=1e-9)
    assert ps[1] / ps[2] == pytest.approx(p[1] / p[2] * 128 / 376, abs=1e-9)


def test_intrinsics_file_round_trip(tmp_path):
    K = CameraIntrinsics(100.25, 120.5, 30.125, 40.0, 64, 80)
    path = tmp_path / "cam.txt"
    K.to_file(path)
    K2 = CameraIntrinsics.from_file(path)
    assert K == K2


# -- pose parametrization ----------------------------------------------------------


def test_zero_pose_is_identity():
    T = pose_vec_to_matrix(PoseVec6()).data
    np.testing.assert_allclose(T, np.eye(4), atol=1e-15)


def test_pure_translation_pose():
    T = pose_vec_to_matrix(PoseVec6(1.0, 2.0, 3.0)).data
    np.testing.assert_allclose(T[:3, :3], np.eye(3), atol=1e-15)
    np.testing.assert_allclose(T[:3, 3], [1.0, 2.0, 3.0])


def test_rotation_matches_elementary_product():
    rx, ry, rz = math.pi / 2, 0.3, -0.7
    T = pose_vec_to_matrix(PoseVec6(0, 0, 0, rx, ry, rz)).data
    oracle = rot_z(rz) @ rot_y(ry) @ rot_x(rx)
    np.testing.assert_allclose(T[:3, :3], oracle, atol=1e-12)
    np.testing.assert_allclose(
        pose_vec_to_matrix(PoseVec6(0, 0, 0, math.pi / 2, 0, 0)).data[:3, :3],
        rot_x(math.pi / 2),
        atol=1e-12,
    )


def test_euler_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = PoseVec6(*rng.uniform(-1.0, 1.0, 3), *rng.uniform(-1.2, 1.2, 3))
        T = pose_vec_to_matrix(p).data
        q = matrix_to_pose_vec(T)
        np.testing.assert_allclose(q.as_array(), p.as_array(), atol=1e-9)


def test_pose_vec_to_matrix_is_differentiable():
    rng = np.random.default_rng(9)
    p = Tensor(rng.uniform(-0.5, 0.5, 6), requires_grad=True)
    probe = Tensor(rng.standard_normal((4, 4)))

    def f():
        return (pose_vec_to_matrix(p) * probe).sum()

    assert max_relative_error(f, [p], rng=rng) < 1e-5


def test_pose_vec_rejects_nonfinite():
    with pytest.raises(NumericError):
        PoseVec6(tx=float("nan"))


# -- SE(3) algebra -------------------------------------------------------------------


def test_validate_se3_rejects_bad_matrices():
    bad_row = np.eye(4)
    bad_row[3, 0] = 0.1
    with pytest.raises(NumericError):
        validate_se3(bad_row)
    bad_rot = np.eye(4)
    bad_rot[0, 0] = 2.0
    with pytest.raises(NumericError):
        validate_se3(bad_rot)
    with pytest.raises(ShapeError):
        validate_se3(np.eye(3))


def test_se3_inverse_identity_and_translation():
    np.testing.assert_allclose(se3_inverse(np.eye(4)), np.eye(4))
    T = se3_matrix(np.eye(3), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(se3_inverse(T)[:3, 3], [-1.0, -2.0, -3.0])


def test_se3_inverse_composes_to_identity():
    rng = np.random.default_rng(5)
    for _ in range(20):
        T = pose_vec_to_matrix(
            PoseVec6(*rng.uniform(-2, 2, 3), *rng.uniform(-1.4, 1.4, 3))
        ).data
        np.testing.assert_allclose(T @ se3_inverse(T), np.eye(4), atol=1e-9)
        validate_se3(se3_inverse(T))


def test_quaternion_of_known_rotations():
    np.testing.assert_allclose(rotation_to_quaternion(np.eye(3)), [1, 0, 0, 0], atol=1e-15)
    q = rotation_to_quaternion(rot_z(math.pi / 2))
    np.testing.assert_allclose(q, [math.sqrt(0.5), 0.0, 0.0, math.sqrt(0.5)], atol=1e-12)
    # half-turn about x exercises the trace <= 0 branch
    q = rotation_to_quaternion(rot_x(math.pi))
    np.testing.assert_allclose(np.abs(q), [0.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_quaternion_sign_canonical():
    rng = np.random.default_rng(7)
    for _ in range(30):
        R = euler_to_rotation(*rng.uniform(-3.0, 3.0, 3))
        q = rotation_to_quaternion(R)
        assert q[0] >= 0.0
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)


# -- depth maps ----------------------------------------------------------------------


def test_depth_map_validates_range():
    with pytest.raises(NumericError):
        DepthMap(np.full((2, 2), -1.0), np.ones((2, 2), dtype=bool))
    with pytest.raises(NumericError):
        DepthMap(np.full((2, 2), 200.0), np.ones((2, 2), dtype=bool), max_depth=80.0)
    # masked-out pixels may hold anything
    DepthMap(np.full((2, 2), -1.0), np.zeros((2, 2), dtype=bool))


def test_depth_map_shape_guard():
    with pytest.raises(ShapeError):
        DepthMap(np.ones((2, 2)), np.ones((3, 3), dtype=bool))


# -- projection -------------------------------------------------------------------------


def test_identity_transform_projects_pixels_onto_themselves():
    K = toy_intrinsics()
    depth = np.full((6, 6), 4.0)
    u, v, valid = project_pixels(K, np.eye(4), depth)
    grid = K.pixel_grid()
    np.testing.assert_allclose(u.data, grid[0], atol=1e-12)
    np.testing.assert_allclose(v.data, grid[1], atol=1e-12)
    assert valid.all()


def test_unit_focal_translation_shifts_u_by_half():
    K = CameraIntrinsics(1.0, 1.0, 0.0, 0.0, 4, 4)
    depth = np.ones((4, 4))
    T = se3_matrix(np.eye(3), [0.5, 0.0, 0.0])
    u, v, valid = project_pixels(K, T, depth)
    grid = K.pixel_grid()
    np.testing.assert_allclose(u.data, grid[0] + 0.5, atol=1e-12)
    np.testing.assert_allclose(v.data, grid[1], atol=1e-12)
    assert valid.all()


def test_projection_matches_homogeneous_matrix_oracle():
    rng = np.random.default_rng(11)
    K = CameraIntrinsics(4.7, 5.3, 2.9, 2.4, 6, 6)
    depth = rng.uniform(2.0, 8.0, (6, 6))
    T = pose_vec_to_matrix(PoseVec6(0.3, -0.2, 0.4, 0.05, -0.08, 0.1)).data
    u, v, valid = project_pixels(K, T, depth)

    Kh = np.eye(4)
    Kh[:3, :3] = K.matrix()
    grid = K.pixel_grid()
    for i in range(36):
        p_h = np.array([grid[0, i], grid[1, i], 1.0, 1.0 / depth.reshape(-1)[i]])
        q = Kh @ T @ np.linalg.inv(Kh) @ (p_h * depth.reshape(-1)[i])
        assert u.data[i] == pytest.approx(q[0] / q[2], abs=1e-10)
        assert v.data[i] == pytest.approx(q[1] / q[2], abs=1e-10)
        assert valid[i]


def test_projection_scale_ambiguity():
    K = toy_intrinsics()
    rng = np.random.default_rng(13)
    depth = rng.uniform(2.0, 6.0, (6, 6))
    p = PoseVec6(0.2, -0.1, 0.3, 0.04, 0.02, -0.03)
    u1, v1, _ = project_pixels(K, pose_vec_to_matrix(p).data, depth)
    doubled = PoseVec6(0.4, -0.2, 0.6, 0.04, 0.02, -0.03)
    u2, v2, _ = project_pixels(K, pose_vec_to_matrix(doubled).data, 2.0 * depth)
    np.testing.assert_allclose(u1.data, u2.data, atol=1e-12)
    np.testing.assert_allclose(v1.data, v2.data, atol=1e-12)


def test_projection_flags_points_behind_camera():
    K = toy_intrinsics()
    depth = np.full((6, 6), 1.0)
    T = se3_matrix(np.eye(3), [0.0, 0.0, -2.0])  # moves all points behind
    _, _, valid = project_pixels(K, T, depth)
    assert not valid.any()


def test_projection_respects_depth_mask():
    K = toy_intrinsics()
    mask = np.ones((6, 6), dtype=bool)
    mask[0, 0] = False
    dm = DepthMap(np.full((6, 6), 3.0), mask)
    _, _, valid = project_pixels(K, np.eye(4), dm)
    assert not valid[0]
    assert valid[1:].all()


def test_projection_round_trip_through_inverse():
    K = toy_intrinsics(fx=8.0, fy=8.0)
    depth = np.full((6, 6), 5.0)
    p = PoseVec6(0.1, -0.05, 0.2, 0.02, -0.01, 0.015)
    T = pose_vec_to_matrix(p).data
    u1, v1, valid1 = project_pixels(K, T, depth)
    # depth of the transformed points in the source frame, per pixel
    grid = K.pixel_grid()
    X = K.inverse_matrix() @ grid * depth.reshape(-1)
    Xs = (T @ np.vstack([X, np.ones(36)]))[:3]
    u2, v2, _, valid2 = project_points(K, se3_inverse(T), u1.data, v1.data, Xs[2])
    np.testing.assert_allclose(u2, grid[0], atol=1e-6)
    np.testing.assert_allclose(v2, grid[1], atol=1e-6)
    assert valid1.all() and valid2.all()


def test_projection_gradcheck_depth_and_pose():
    rng = np.random.default_rng(17)
    K = toy_intrinsics()
    depth = Tensor(rng.uniform(3.0, 6.0, (6, 6)), requires_grad=True)
    pvec = Tensor(np.array([0.1, -0.1, 0.2, 0.03, -0.02, 0.04]), requires_grad=True)
    pu = Tensor(rng.standard_normal(36))
    pv = Tensor(rng.standard_normal(36))

    def f():
        u, v, _ = project_pixels(K, pose_vec_to_matrix(pvec), depth)
        return (u * pu).sum() + (v * pv).sum()

    assert max_relative_error(f, [depth, pvec], rng=rng) < 1e-4


def test_project_points_agrees_with_project_pixels():
    rng = np.random.default_rng(19)
    K = toy_intrinsics()
    depth = rng.uniform(2.0, 7.0, (6, 6))
    T = pose_vec_to_matrix(PoseVec6(0.2, 0.1, -0.1, 0.05, 0.02, -0.04)).data
    u1, v1, valid1 = project_pixels(K, T, depth)
    grid = K.pixel_grid()
    u2, v2, _, valid2 = project_points(K, T, grid[0], grid[1], depth.reshape(-1))
    np.testing.assert_allclose(u1.data, u2, atol=1e-12)
    np.testing.assert_allclose(v1.data, v2, atol=1e-12)
    np.testing.assert_array_equal(valid1, valid2)


# -- disparity ----------------------------------------------------------------------------


def test_disparity_range_endpoints():
    assert disparity_to_depth(1.0, d_min=0.01, d_max=10.0).item() == pytest.approx(0.1)
    assert disparity_to_depth(-1.0, d_min=0.01, d_max=10.0).item() == pytest.approx(100.0)


def test_disparity_midpoint_formula():
    out = disparity_to_depth(0.0, d_min=0.01, d_max=2.0)
    assert out.item() == pytest.approx(1.0 / 1.005, abs=1e-12)


def test_disparity_monotone_decreasing_and_differentiable():
    raw = Tensor(np.linspace(-0.95, 0.95, 21), requires_grad=True)
    depth = disparity_to_depth(raw)
    assert np.all(np.diff(depth.data) < 0)
    depth.sum().backward()
    assert np.all(raw.grad < 0)

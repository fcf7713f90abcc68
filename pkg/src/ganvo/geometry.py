"""Pinhole camera model, 6-DoF pose parametrization and pixel projection.

Conventions fixed here and relied on everywhere else:

* A 6-DoF pose vector is (tx, ty, tz, rx, ry, rz); rotations are Euler
  angles in radians composed as R = Rz(rz) @ Ry(ry) @ Rx(rx) acting on
  column vectors.
* A pose vector regressed for a (target, source) frame pair parametrizes
  the transform FROM target-camera coordinates TO source-camera
  coordinates: X_s = T @ [X_t; 1].
* Projection of a target pixel through depth and relative pose:
  back-project X = depth * K^-1 p, transform X' = T [X; 1], project
  p' = K X'[0:3], then dehomogenize by the third coordinate.  Equality is
  up to homogeneous scale, so doubling depth and translation together
  leaves the projected pixel unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine.tensor import Tensor
from .errors import ConfigError, DataError, NumericError, ShapeError

SE3_TOL = 1e-9
Z_MIN_DEFAULT = 1e-3
DISP_MIN_DEFAULT = 0.01
DISP_MAX_DEFAULT = 10.0
MAX_DEPTH_DEFAULT = 80.0


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole calibration: focal lengths, principal point, image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 2 or self.height < 2:
            raise ConfigError(f"image size must be at least 2x2, got {self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse_matrix(self) -> np.ndarray:
        # closed form; exact for a pinhole K
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, new_width: int, new_height: int) -> "CameraIntrinsics":
        """Rescale proportionally for a resized image."""
        sx = new_width / self.width
        sy = new_height / self.height
        return CameraIntrinsics(
            self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, new_width, new_height
        )

    def pixel_grid(self) -> np.ndarray:
        """Homogeneous pixel coordinates, shape (3, H*W), row-major pixels."""
        v, u = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        ones = np.ones(self.width * self.height)
        return np.stack([u.reshape(-1).astype(float), v.reshape(-1).astype(float), ones])

    @staticmethod
    def from_file(path) -> "CameraIntrinsics":
        """Read `fx fy cx cy width height` from a one-line calibration file."""
        try:
            with open(path) as fh:
                line = fh.readline()
        except OSError as exc:
            raise DataError(f"cannot read calibration file {path}: {exc}") from exc
        fields = line.split()
        if len(fields) != 6:
            raise DataError(f"calibration file {path} must hold 6 numbers, got {len(fields)}")
        fx, fy, cx, cy = (float(x) for x in fields[:4])
        return CameraIntrinsics(fx, fy, cx, cy, int(float(fields[4])), int(float(fields[5])))

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{self.fx!r} {self.fy!r} {self.cx!r} {self.cy!r} {self.width} {self.height}\n")


@dataclass
class PoseVec6:
    """Relative 6-DoF motion: translation in scene units, Euler radians."""

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.as_array()):
            raise NumericError(f"pose components must be finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz, self.rx, self.ry, self.rz])

    @staticmethod
    def from_array(a) -> "PoseVec6":
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != 6:
            raise ShapeError(f"pose vector needs 6 components, got {a.size}")
        return PoseVec6(*a.tolist())


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(rx: float, ry: float, rz: float) -> np.ndarray:
    return rot_z(rz) @ rot_y(ry) @ rot_x(rx)


def se3_matrix(rotation: np.ndarray, translation) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = np.asarray(translation, dtype=float).reshape(3)
    return T


def validate_se3(T: np.ndarray, tol: float = SE3_TOL) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4):
        raise ShapeError(f"SE(3) matrix must be 4x4, got {T.shape}")
    if not np.allclose(T[3], [0.0, 0.0, 0.0, 1.0], atol=tol):
        raise NumericError(f"SE(3) bottom row must be [0,0,0,1], got {T[3]}")
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol):
        raise NumericError("SE(3) rotation block is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise NumericError(f"SE(3) rotation determinant is {np.linalg.det(R)}, expected +1")
    return T


def se3_inverse(T: np.ndarray) -> np.ndarray:
    """Closed-form inverse [R^T, -R^T t]."""
    T = validate_se3(T)
    R = T[:3, :3]
    out = np.eye(4)
    out[:3, :3] = R.T
    out[:3, 3] = -R.T @ T[:3, 3]
    return out


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (qw, qx, qy, qz) with qw >= 0 (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = math.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = math.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class DepthMap:
    """Per-pixel depth in scene units plus validity mask."""

    data: np.ndarray
    mask: np.ndarray
    max_depth: float = MAX_DEPTH_DEFAULT

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.data.ndim != 2 or self.mask.shape != self.data.shape:
            raise ShapeError(
                f"depth map needs matching 2-D data and mask, got {self.data.shape} / {self.mask.shape}"
            )
        valid = self.data[self.mask]
        if valid.size and (np.any(valid <= 0) or np.any(valid > self.max_depth)):
            raise NumericError(
                f"valid depths must lie in (0, {self.max_depth}], "
                f"got range [{valid.min()}, {valid.max()}]"
            )

    @staticmethod
    def full(data: np.ndarray, max_depth: float = MAX_DEPTH_DEFAULT) -> "DepthMap":
        data = np.asarray(data, dtype=float)
        return DepthMap(data, np.ones(data.shape, dtype=bool), max_depth)


def _tensor6(p) -> Tensor:
    if isinstance(p, Tensor):
        if p.size != 6:
            raise ShapeError(f"pose tensor needs 6 components, got shape {p.shape}")
        return p.reshape(6)
    if isinstance(p, PoseVec6):
        return Tensor(p.as_array())
    return Tensor(np.asarray(p, dtype=float).reshape(6))


def pose_vec_to_matrix(p) -> Tensor:
    """Build the 4x4 transform from a 6-vector, differentiably.

    Accepts a Tensor, a PoseVec6 or any 6 floats; the result is a Tensor so
    gradients flow back into all 6 components when `p` is a graph node.
    """
    p = _tensor6(p)
    tx, ty, tz = p[0], p[1], p[2]
    cx, sx = p[3].cos(), p[3].sin()
    cy, sy = p[4].cos(), p[4].sin()
    cz, sz = p[5].cos(), p[5].sin()
    zero = Tensor(0.0)
    one = Tensor(1.0)
    Rx = Tensor.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    Ry = Tensor.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    Rz = Tensor.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    R = Rz @ Ry @ Rx
    top = Tensor.concat([R, Tensor.stack([tx, ty, tz]).reshape(3, 1)], axis=1)
    bottom = Tensor(np.array([[0.0, 0.0, 0.0, 1.0]]))
    return Tensor.concat([top, bottom], axis=0)


def matrix_to_pose_vec(T: np.ndarray) -> PoseVec6:
    """Recover (t, Euler angles) from an SE(3) matrix; inverse of the above.

    ry is taken in (-pi/2, pi/2); callers comparing raw vectors across
    codebases must account for the Rz*Ry*Rx convention.
    """
    T = validate_se3(T)
    R = T[:3, :3]
    ry = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(math.cos(ry)) < 1e-9:
        # gimbal lock: fold rz into rx
        rx = math.atan2(-R[1, 2], R[1, 1])
        rz = 0.0
    else:
        rx = math.atan2(R[2, 1], R[2, 2])
        rz = math.atan2(R[1, 0], R[0, 0])
    return PoseVec6(T[0, 3], T[1, 3], T[2, 3], rx, ry, rz)


def project_points(
    K: CameraIntrinsics, T: np.ndarray, u, v, depth, z_min: float = Z_MIN_DEFAULT
):
    """Numpy projection of explicit pixel coordinates through depth and T.

    Returns (u', v', z', valid).  Shares the math of ``project_pixels`` but
    takes arbitrary coordinate arrays; used by oracles and round-trip tests.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float).reshape(-1)
    depth = np.asarray(depth, dtype=float).reshape(-1)
    pts = np.stack([u, v, np.ones_like(u)])
    rays = K.inverse_matrix() @ pts
    X = np.vstack([rays * depth, np.ones_like(u)[None]])
    Xs = T @ X
    pix = K.matrix() @ Xs[:3]
    z = pix[2]
    valid = z > z_min
    z_safe = np.maximum(z, z_min)
    return pix[0] / z_safe, pix[1] / z_safe, z, valid


def project_pixels(K: CameraIntrinsics, T, depth, z_min: float = Z_MIN_DEFAULT):
    """Project every target pixel into the source view.

    `T` may be a Tensor (4, 4) or ndarray; `depth` a Tensor (H, W), ndarray
    or DepthMap.  Returns (u, v, valid) where u, v are flat Tensors of
    length H*W and valid is a boolean ndarray flagging pixels whose
    transformed depth exceeds `z_min` (and which were valid in the input
    depth map).  Differentiable w.r.t. depth and T.
    """
    depth_mask = None
    if isinstance(depth, DepthMap):
        depth_mask = depth.mask.reshape(-1)
        depth = Tensor(depth.data)
    elif not isinstance(depth, Tensor):
        depth = Tensor(np.asarray(depth, dtype=float))
    if depth.ndim != 2:
        raise ShapeError(f"depth must be 2-D, got shape {depth.shape}")
    h, w = depth.shape
    if (w, h) != (K.width, K.height):
        raise ShapeError(
            f"depth map {w}x{h} does not match intrinsics {K.width}x{K.height}"
        )
    if not isinstance(T, Tensor):
        T = Tensor(np.asarray(T, dtype=float))
    if T.shape != (4, 4):
        raise ShapeError(f"transform must be 4x4, got {T.shape}")

    npix = h * w
    rays = Tensor(K.inverse_matrix() @ K.pixel_grid())  # (3, H*W)
    X = rays * depth.reshape(1, npix)
    Xh = Tensor.concat([X, Tensor(np.ones((1, npix)))], axis=0)
    Xs = T @ Xh
    pix = Tensor(np.hstack([K.matrix(), np.zeros((3, 1))])) @ Xs
    z = pix[2]
    valid = z.data > z_min
    if depth_mask is not None:
        valid = valid & depth_mask
    z_safe = z.clamp(low=z_min)
    return pix[0] / z_safe, pix[1] / z_safe, valid


def disparity_to_depth(
    raw, d_min: float = DISP_MIN_DEFAULT, d_max: float = DISP_MAX_DEFAULT
) -> Tensor:
    """Map a tanh output in (-1, 1) to depth via an affine disparity ramp.

    disparity = d_min + (raw + 1)/2 * (d_max - d_min); depth = 1/disparity.
    Monotone decreasing from 1/d_min (raw -> -1) to 1/d_max (raw -> +1).
    """
    if not isinstance(raw, Tensor):
        raw = Tensor(np.asarray(raw, dtype=float))
    disparity = (raw + 1.0) * (0.5 * (d_max - d_min)) + d_min
    return 1.0 / disparity

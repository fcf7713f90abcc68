"""Odometry-benchmark directory ingestion.

Expected layout under a dataset root::

    sequences/<id>/image_2/000000.png ...   8-bit frames
    sequences/<id>/cam.txt                  one line: fx fy cx cy width height
    poses/<id>.txt                          12 floats per line, row-major 3x4
                                            camera-to-world

Frames are decoded to float arrays in [0, 1], resized to the configured
evaluation size, and the intrinsics are rescaled proportionally so that
projections of fixed scene points land at proportionally scaled pixels.
"""

from __future__ import annotations

import functools
import os

import numpy as np
from PIL import Image

from ..errors import DataError
from ..geometry import CameraIntrinsics, PoseVec6, matrix_to_pose_vec, se3_inverse, validate_se3
from .types import DatasetManifest, SampleSequence

POSE_TOL = 1e-6  # rotation orthonormality slack for parsed pose files


def read_pose_file(path) -> list:
    """Parse a 12-floats-per-line trajectory file into 4x4 matrices."""
    if not os.path.isfile(path):
        raise DataError(f"pose file not found: {path}")
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 values, got {len(fields)}")
            try:
                vals = np.array([float(x) for x in fields]).reshape(3, 4)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric pose entry ({exc})") from exc
            T = np.eye(4)
            T[:3] = vals
            try:
                validate_se3(T, tol=POSE_TOL)
            except Exception as exc:
                raise DataError(f"{path}:{lineno}: invalid pose: {exc}") from exc
            poses.append(T)
    if not poses:
        raise DataError(f"pose file is empty: {path}")
    return poses


def write_pose_file(path, poses) -> None:
    with open(path, "w") as fh:
        for T in poses:
            fh.write(" ".join(f"{v:.12e}" for v in np.asarray(T)[:3].reshape(-1)) + "\n")


def load_image(path, width: int, height: int) -> np.ndarray:
    """Decode to (3, height, width) floats in [0, 1], bilinear resize."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (width, height):
                im = im.resize((width, height), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


class KittiSequence:
    """One sequence: lazy frames, rescaled intrinsics, optional gt poses."""

    def __init__(self, root, sequence_id: str, width: int, height: int, camera: str = "image_2"):
        self.root = str(root)
        self.sequence_id = sequence_id
        self.width = int(width)
        self.height = int(height)
        seq_dir = os.path.join(self.root, "sequences", sequence_id)
        img_dir = os.path.join(seq_dir, camera)
        if not os.path.isdir(img_dir):
            raise DataError(f"image directory not found: {img_dir}")
        self.image_paths = sorted(
            os.path.join(img_dir, f) for f in os.listdir(img_dir) if f.endswith(".png")
        )
        if not self.image_paths:
            raise DataError(f"no .png frames under {img_dir}")

        cam_path = os.path.join(seq_dir, "cam.txt")
        if not os.path.isfile(cam_path):
            raise DataError(f"calibration file not found: {cam_path}")
        native = CameraIntrinsics.from_file(cam_path)
        self.intrinsics = native.scaled(self.width, self.height)

        pose_path = os.path.join(self.root, "poses", f"{sequence_id}.txt")
        self.gt_cam_to_world = read_pose_file(pose_path) if os.path.isfile(pose_path) else None
        if self.gt_cam_to_world is not None and len(self.gt_cam_to_world) != len(self.image_paths):
            raise DataError(
                f"{pose_path}: {len(self.gt_cam_to_world)} poses for "
                f"{len(self.image_paths)} frames in {img_dir}"
            )

        depth_dir = os.path.join(seq_dir, "depth")
        self.depth_paths = None
        if os.path.isdir(depth_dir):
            self.depth_paths = sorted(
                os.path.join(depth_dir, f) for f in os.listdir(depth_dir) if f.endswith(".png")
            )
            if len(self.depth_paths) != len(self.image_paths):
                raise DataError(f"{depth_dir}: depth/frame count mismatch")

    @property
    def n_frames(self) -> int:
        return len(self.image_paths)

    @functools.lru_cache(maxsize=64)
    def frame(self, i: int) -> np.ndarray:
        return load_image(self.image_paths[i], self.width, self.height)

    def gt_depth(self, i: int, max_depth: float = 80.0):
        """Millimeter-quantized 16-bit depth, when the dataset ships one."""
        if self.depth_paths is None:
            return None
        from ..export import read_depth_png16
        from ..geometry import DepthMap

        dm = read_depth_png16(self.depth_paths[i])
        if dm.data.shape != (self.height, self.width):
            raise DataError(
                f"{self.depth_paths[i]}: depth is {dm.data.shape}, frames are "
                f"{(self.height, self.width)}; depth maps are not resized"
            )
        mask = dm.mask & (dm.data <= max_depth)
        return DepthMap(np.where(mask, dm.data, 1.0), mask, max_depth)

    def relative_pose(self, target: int, source: int) -> PoseVec6:
        """Ground-truth target-camera-to-source-camera motion."""
        if self.gt_cam_to_world is None:
            raise DataError(f"sequence {self.sequence_id} has no ground-truth poses")
        M = se3_inverse(self.gt_cam_to_world[source]) @ self.gt_cam_to_world[target]
        return matrix_to_pose_vec(M)

    def sample_sequences(self, n: int) -> list:
        """All length-n sliding windows; never crosses into other sequences."""
        if self.n_frames < n:
            raise DataError(f"sequence {self.sequence_id} has {self.n_frames} frames, window needs {n}")
        half = (n - 1) // 2
        out = []
        for start in range(self.n_frames - n + 1):
            t = start + half
            gt_poses = None
            if self.gt_cam_to_world is not None:
                gt_poses = [self.relative_pose(t, s) for s in range(start, start + n) if s != t]
            out.append(
                SampleSequence(
                    frames=[self.frame(i) for i in range(start, start + n)],
                    intrinsics=self.intrinsics,
                    target_index=half,
                    gt_poses=gt_poses,
                    gt_depth=self.gt_depth(t),
                    sequence_id=self.sequence_id,
                    frame_ids=list(range(start, start + n)),
                )
            )
        return out


def load_kitti_sequence(manifest: DatasetManifest, sequence_id: str) -> KittiSequence:
    return KittiSequence(
        manifest.root, sequence_id, manifest.width, manifest.height, camera=manifest.camera
    )


def available_sequences(root) -> list:
    seq_root = os.path.join(str(root), "sequences")
    if not os.path.isdir(seq_root):
        raise DataError(f"dataset root has no sequences/ directory: {root}")
    return sorted(d for d in os.listdir(seq_root) if os.path.isdir(os.path.join(seq_root, d)))

"""Sample containers shared by the loaders, the trainer and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ShapeError
from ..geometry import CameraIntrinsics, DepthMap, PoseVec6


@dataclass
class SampleSequence:
    """A window of N consecutive frames centered on the target frame.

    frames: list of (3, H, W) float arrays in [0, 1], time order.
    target_index: always the center, (N-1)//2, N odd.
    gt_poses: optional target-to-source motion for each non-target frame,
    in time order; gt_depth: optional target-frame depth; both exact for
    synthetic data, absent for raw camera data.
    """

    frames: list
    intrinsics: CameraIntrinsics
    target_index: int
    gt_poses: list | None = None
    gt_depth: DepthMap | None = None
    sequence_id: str = ""
    frame_ids: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.frames)
        if n < 2:
            raise ShapeError(f"a sample needs at least 2 frames, got {n}")
        if n % 2 == 1 and self.target_index != (n - 1) // 2:
            raise ShapeError(f"target must be the center frame, got index {self.target_index} of {n}")
        shape = self.frames[0].shape
        for k, f in enumerate(self.frames):
            if f.shape != shape:
                raise ShapeError(f"frame {k} shape {f.shape} differs from {shape}")
        h, w = shape[-2:]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise ShapeError(
                f"frames are {w}x{h} but intrinsics say "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        if self.gt_poses is not None and len(self.gt_poses) != n - 1:
            raise ShapeError(f"need {n - 1} relative poses, got {len(self.gt_poses)}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def target(self) -> np.ndarray:
        return self.frames[self.target_index]

    def sources(self) -> list:
        return [f for k, f in enumerate(self.frames) if k != self.target_index]

    def source_pose(self, source_rank: int) -> PoseVec6:
        if self.gt_poses is None:
            raise DataError("sample carries no ground-truth poses")
        return self.gt_poses[source_rank]


@dataclass
class DatasetManifest:
    """Where a KITTI-layout dataset lives and how it is split."""

    root: str
    train_sequences: list
    val_sequences: list = ()
    test_sequences: list = ()
    width: int = 416
    height: int = 128
    camera: str = "image_2"

    def __post_init__(self):
        groups = [set(self.train_sequences), set(self.val_sequences), set(self.test_sequences)]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = groups[i] & groups[j]
                if overlap:
                    raise DataError(f"split lists overlap on sequences {sorted(overlap)}")

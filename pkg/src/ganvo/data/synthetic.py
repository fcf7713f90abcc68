"""Procedural test scenes with exact ground-truth depth and motion.

Scenes are piecewise-planar surfaces (a graph z = d0 + gx*x + gy*y per
piece) textured by seeded value noise and rendered by exact ray casting
through the same pinhole model the rest of the package uses.  Because the
depth of every pixel and the pose of every frame are analytic, rendered
sequences serve as oracles for the warping chain: resampling a source
frame with the true depth and pose must reproduce the target frame up to
bilinear interpolation error.

Textures are kept smooth at the pixel scale (finest octave several pixels
wide) precisely to keep that interpolation error well under half an 8-bit
intensity level while still giving the photometric loss usable gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, DataError
from ..geometry import (
    CameraIntrinsics,
    DepthMap,
    PoseVec6,
    euler_to_rotation,
    matrix_to_pose_vec,
    se3_inverse,
    se3_matrix,
)
from .types import SampleSequence

SCENE_KINDS = ("fronto", "slanted", "corner")
MOTION_KINDS = ("static", "lateral", "forward", "mixed")
MIN_CLEARANCE = 0.5  # scene units between any camera and the surface

_LATTICE = 64  # noise lattice period, in cells


@dataclass(frozen=True)
class SceneConfig:
    kind: str = "fronto"
    width: int = 48
    height: int = 16
    fx: float = 0.0  # 0 -> 0.7 * width
    n_frames: int = 5
    motion: str = "mixed"
    step: float = 0.1  # per-frame translation scale, scene units
    rot_step: float = 0.01  # per-frame rotation scale, radians (mixed only)
    base_depth: float = 5.0
    slope: tuple = (0.25, 0.15)  # slanted plane: z = d0 + gx*x + gy*y
    corner_slope: float = 0.3  # corner scene: z = d0 + m*|x|
    texture_cells: tuple = (2.4, 1.2)  # octave cell sizes, scene units
    texture_amps: tuple = (0.3, 0.15)
    max_depth: float = 80.0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ConfigError(f"unknown scene kind {self.kind!r}, expected one of {SCENE_KINDS}")
        if self.motion not in MOTION_KINDS:
            raise ConfigError(f"unknown motion {self.motion!r}, expected one of {MOTION_KINDS}")
        if self.n_frames < 1:
            raise ConfigError("n_frames must be positive")
        if self.base_depth <= MIN_CLEARANCE:
            raise ConfigError(f"base_depth {self.base_depth} leaves no camera clearance")
        if len(self.texture_cells) != len(self.texture_amps):
            raise ConfigError("texture_cells and texture_amps must pair up")

    def intrinsics(self) -> CameraIntrinsics:
        fx = self.fx if self.fx > 0 else 0.7 * self.width
        return CameraIntrinsics(
            fx, fx, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height
        )


@dataclass(frozen=True)
class _Plane:
    """Graph surface z = d0 + gx*x + gy*y over a half-space of x."""

    d0: float
    gx: float = 0.0
    gy: float = 0.0
    x_side: int = 0  # 0: whole plane, +1: x >= 0 only, -1: x <= 0 only


def _scene_planes(cfg: SceneConfig) -> list:
    if cfg.kind == "fronto":
        return [_Plane(cfg.base_depth)]
    if cfg.kind == "slanted":
        return [_Plane(cfg.base_depth, cfg.slope[0], cfg.slope[1])]
    # corner: two wings receding from a vertical crease at x = 0; every ray
    # from near the origin crosses exactly one wing, so there is no
    # occlusion anywhere on the camera path
    return [
        _Plane(cfg.base_depth, cfg.corner_slope, 0.0, x_side=1),
        _Plane(cfg.base_depth, -cfg.corner_slope, 0.0, x_side=-1),
    ]


class ValueNoise:
    """Periodic value noise: quintic-smoothed interpolation of a seeded
    lattice of uniform values.  C2-continuous, so resampling a rendering
    of it stays within tight interpolation bounds."""

    def __init__(self, rng: np.random.Generator, channels: int = 1):
        self.lattice = rng.random((channels, _LATTICE, _LATTICE))

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        i0 = np.floor(x).astype(int)
        j0 = np.floor(y).astype(int)
        fx = x - i0
        fy = y - j0
        i0 %= _LATTICE
        j0 %= _LATTICE
        i1 = (i0 + 1) % _LATTICE
        j1 = (j0 + 1) % _LATTICE
        # quintic smoothstep: zero first and second derivative at the ends
        wx = fx * fx * fx * (fx * (fx * 6.0 - 15.0) + 10.0)
        wy = fy * fy * fy * (fy * (fy * 6.0 - 15.0) + 10.0)
        lat = self.lattice
        top = lat[:, j0, i0] * (1.0 - wx) + lat[:, j0, i1] * wx
        bot = lat[:, j1, i0] * (1.0 - wx) + lat[:, j1, i1] * wx
        return top * (1.0 - wy) + bot * wy


class Texture:
    """Sum of value-noise octaves over world (x, y), 3 color channels."""

    def __init__(self, rng: np.random.Generator, cells, amps):
        self.cells = tuple(float(c) for c in cells)
        self.amps = tuple(float(a) for a in amps)
        self.octaves = [ValueNoise(rng, channels=3) for _ in self.cells]

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.full((3,) + x.shape, 0.5)
        for noise, cell, amp in zip(self.octaves, self.cells, self.amps):
            out += amp * (noise(x / cell, y / cell) - 0.5) * 2.0
        return np.clip(out, 0.02, 0.98)


def _camera_path(cfg: SceneConfig, rng: np.random.Generator) -> list:
    """Camera-to-world transforms, world frame = first camera frame."""
    poses = [np.eye(4)]
    for k in range(1, cfg.n_frames):
        if cfg.motion == "static":
            poses.append(np.eye(4))
            continue
        if cfg.motion == "lateral":
            poses.append(se3_matrix(np.eye(3), [k * cfg.step, 0.0, 0.0]))
            continue
        if cfg.motion == "forward":
            poses.append(se3_matrix(np.eye(3), [0.0, 0.0, k * cfg.step]))
            continue
        # mixed: forward drift with jittered translation and small rotation
        t = rng.uniform(-1.0, 1.0, 3) * cfg.step * np.array([0.6, 0.3, 0.4])
        t[2] += cfg.step * 0.6
        angles = rng.uniform(-1.0, 1.0, 3) * cfg.rot_step
        prev = poses[-1]
        delta = se3_matrix(euler_to_rotation(*angles), t)
        poses.append(prev @ delta)
    return poses


class SyntheticScene:
    """Rendered frame sequence with analytic ground truth."""

    def __init__(self, seed: int, config: SceneConfig):
        self.config = config
        self.seed = int(seed)
        self.intrinsics = config.intrinsics()
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))
        self.texture = Texture(rng, config.texture_cells, config.texture_amps)
        self.cam_to_world = _camera_path(config, rng)
        self.planes = _scene_planes(config)
        self.frames = []
        self.depths = []
        for k, pose in enumerate(self.cam_to_world):
            image, depth = self._render(pose)
            if depth.min() < MIN_CLEARANCE:
                raise ConfigError(
                    f"camera for frame {k} is within {depth.min():.3f} of the surface; "
                    "reduce motion step or move the scene back"
                )
            self.frames.append(image)
            self.depths.append(depth)

    def _render(self, cam_to_world: np.ndarray):
        K = self.intrinsics
        grid = K.pixel_grid()  # (3, H*W) homogeneous pixels
        rays_cam = K.inverse_matrix() @ grid  # z component is exactly 1
        R = cam_to_world[:3, :3]
        o = cam_to_world[:3, 3]
        rays_w = R @ rays_cam

        depth = np.full(grid.shape[1], np.inf)
        hit_x = np.zeros(grid.shape[1])
        hit_y = np.zeros(grid.shape[1])
        for plane in self.planes:
            denom = rays_w[2] - plane.gx * rays_w[0] - plane.gy * rays_w[1]
            numer = plane.d0 + plane.gx * o[0] + plane.gy * o[1] - o[2]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(np.abs(denom) > 1e-12, numer / denom, np.inf)
            x = o[0] + t * rays_w[0]
            y = o[1] + t * rays_w[1]
            ok = (t > 0) & np.isfinite(t)
            if plane.x_side > 0:
                ok &= x >= -1e-12
            elif plane.x_side < 0:
                ok &= x <= 1e-12
            closer = ok & (t < depth)
            depth = np.where(closer, t, depth)
            hit_x = np.where(closer, x, hit_x)
            hit_y = np.where(closer, y, hit_y)

        if not np.all(np.isfinite(depth)):
            raise ConfigError("some rays miss the scene surface; geometry is degenerate")
        # camera depth equals the ray parameter because rays have unit z
        image = self.texture(hit_x, hit_y).reshape(3, K.height, K.width)
        return image, depth.reshape(K.height, K.width)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def depth_map(self, k: int) -> DepthMap:
        return DepthMap.full(self.depths[k], max_depth=self.config.max_depth)

    def relative_pose(self, target: int, source: int) -> PoseVec6:
        """Exact target-camera-to-source-camera motion."""
        M = se3_inverse(self.cam_to_world[source]) @ self.cam_to_world[target]
        return matrix_to_pose_vec(M)

    def sample_sequences(self, n: int, sequence_id: str = "") -> list:
        """All sliding windows of n frames, target at the center."""
        if n < 2 or n % 2 == 0:
            raise ConfigError(f"window length must be odd and >= 3, got {n}")
        if self.n_frames < n:
            raise DataError(f"scene has {self.n_frames} frames, window needs {n}")
        out = []
        half = (n - 1) // 2
        for start in range(self.n_frames - n + 1):
            t = start + half
            poses = [self.relative_pose(t, s) for s in range(start, start + n) if s != t]
            out.append(
                SampleSequence(
                    frames=[self.frames[i] for i in range(start, start + n)],
                    intrinsics=self.intrinsics,
                    target_index=half,
                    gt_poses=poses,
                    gt_depth=self.depth_map(t),
                    sequence_id=sequence_id or f"synth{self.seed:04d}",
                    frame_ids=list(range(start, start + n)),
                )
            )
        return out


def generate_synthetic_scene(seed: int, config: SceneConfig | None = None, **overrides) -> SyntheticScene:
    """Render a scene; `overrides` replace fields of `config` (or defaults)."""
    cfg = config or SceneConfig()
    if overrides:
        cfg = replace(cfg, **overrides)
    return SyntheticScene(seed, cfg)


@dataclass
class SyntheticDataset:
    """A family of scenes used as an in-memory training corpus."""

    scenes: list
    samples: list = field(default_factory=list)

    @staticmethod
    def build(
        seed: int,
        n_scenes: int = 6,
        frames_per_scene: int = 12,
        window: int = 3,
        config: SceneConfig | None = None,
    ) -> "SyntheticDataset":
        base = config or SceneConfig()
        root = np.random.SeedSequence(seed)
        scene_seeds = root.generate_state(n_scenes)
        scenes = []
        for i in range(n_scenes):
            kind = SCENE_KINDS[i % len(SCENE_KINDS)]
            scenes.append(
                generate_synthetic_scene(
                    int(scene_seeds[i]), base, kind=kind, n_frames=frames_per_scene
                )
            )
        samples = []
        for i, scene in enumerate(scenes):
            samples.extend(scene.sample_sequences(window, sequence_id=f"{i:02d}"))
        return SyntheticDataset(scenes=scenes, samples=samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> SampleSequence:
        return self.samples[i]


TOY_HOLDOUT_FRAMES = 2


def toy_dataset(seed: int = 42):
    """Standard desk-scale training corpus.

    Three lateral-motion scenes (one per surface kind) with strong sideways
    parallax, so per-pixel flow is proportional to inverse depth and a short
    training run can pin down depth ordering.  The last two frames of every
    scene are held out of the training windows for depth evaluation.

    Returns (dataset, train_samples, heldout) where heldout lists
    (scene, frame_index) pairs for the scenes with non-constant depth.
    """
    config = SceneConfig(motion="lateral", step=0.4, texture_cells=(1.6, 0.8))
    frames = 12 + TOY_HOLDOUT_FRAMES
    ds = SyntheticDataset.build(
        seed=seed, n_scenes=3, frames_per_scene=frames, window=3, config=config
    )
    train = [s for s in ds.samples if max(s.frame_ids) < 12]
    heldout = [
        (scene, k)
        for scene in ds.scenes
        if scene.config.kind != "fronto"  # constant depth has no rank order
        for k in range(12, frames)
    ]
    return ds, train, heldout

"""Artifact writers: depth PNGs, trajectory CSV/SVG, metrics JSON.

All writers are deterministic: the same arrays produce byte-identical
files, so artifacts can be compared across runs with a plain hash.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError
from .evaluation import Trajectory
from .geometry import DepthMap, rotation_to_quaternion

MM_PER_M = 1000.0
MAX_PNG16_DEPTH = 65535 / MM_PER_M  # representable ceiling, meters

# five-stop gradient for false-color depth (dark blue -> yellow)
_COLOR_STOPS = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)


def write_depth_png16(path, depth) -> None:
    """Write a depth map as a millimeter-quantized 16-bit grayscale PNG.

    Valid pixels store round(depth * 1000) clipped to [1, 65535]; invalid
    pixels store 0.  Depths beyond ~65.5 m saturate at the format ceiling.
    """
    if isinstance(depth, DepthMap):
        data, mask = depth.data, depth.mask
    else:
        data = np.asarray(depth, dtype=float)
        mask = np.isfinite(data) & (data > 0)
    if data.ndim != 2:
        raise ShapeError(f"depth must be 2-D, got shape {data.shape}")
    mm = np.zeros(data.shape, dtype=np.uint16)
    quant = np.clip(np.rint(data[mask] * MM_PER_M), 1, 65535)
    mm[mask] = quant.astype(np.uint16)
    Image.fromarray(mm).save(str(path), format="PNG")


def read_depth_png16(path) -> DepthMap:
    """Read a millimeter-quantized 16-bit depth PNG; 0 marks invalid."""
    with Image.open(str(path)) as img:
        if img.mode not in ("I;16", "I", "I;16B"):
            raise DataError(f"{path}: expected 16-bit grayscale, got mode {img.mode}")
        raw = np.asarray(img, dtype=np.uint32)
    mask = raw > 0
    data = raw.astype(float) / MM_PER_M
    data[~mask] = 1.0  # placeholder behind the mask
    return DepthMap(data, mask, max_depth=max(MAX_PNG16_DEPTH, float(data.max())))


def write_image_png(path, image) -> None:
    """Write a (3, H, W) float image in [0, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ShapeError(f"image must be (3, H, W), got {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise DataError("image values must lie in [0, 1]")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(np.moveaxis(u8, 0, 2), mode="RGB").save(str(path), format="PNG")


def read_image_png(path) -> np.ndarray:
    """Read an RGB PNG into a (3, H, W) float array in [0, 1]."""
    with Image.open(str(path)) as img:
        arr = np.asarray(img.convert("RGB"), dtype=float) / 255.0
    return np.moveaxis(arr, 2, 0)


def depth_to_false_color(depth) -> np.ndarray:
    """Map a depth map to (3, H, W) uint8 via a fixed inverse-depth LUT.

    Near pixels render bright, far pixels dark blue, invalid ones black.
    """
    if isinstance(depth, DepthMap):
        data, mask = depth.data, depth.mask
    else:
        data = np.asarray(depth, dtype=float)
        mask = np.isfinite(data) & (data > 0)
    out = np.zeros((3,) + data.shape, dtype=np.uint8)
    if not mask.any():
        return out
    inv = np.zeros_like(data)
    inv[mask] = 1.0 / data[mask]
    lo, hi = inv[mask].min(), inv[mask].max()
    t = np.zeros_like(inv) if hi - lo < 1e-12 else (inv - lo) / (hi - lo)
    # piecewise-linear interpolation through the gradient stops
    pos = np.clip(t, 0.0, 1.0) * (len(_COLOR_STOPS) - 1)
    idx = np.minimum(pos.astype(int), len(_COLOR_STOPS) - 2)
    frac = pos - idx
    for c in range(3):
        band = _COLOR_STOPS[idx, c] * (1 - frac) + _COLOR_STOPS[idx + 1, c] * frac
        out[c][mask] = np.rint(band[mask]).astype(np.uint8)
    return out


def write_depth_false_color(path, depth) -> None:
    rgb = depth_to_false_color(depth)
    Image.fromarray(np.moveaxis(rgb, 0, 2), mode="RGB").save(str(path), format="PNG")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """Write one row per pose: frame,x,y,z,qw,qx,qy,qz."""
    lines = ["frame,x,y,z,qw,qx,qy,qz"]
    for fid, T in zip(traj.frame_ids, traj.poses):
        q = rotation_to_quaternion(T[:3, :3])
        vals = [T[0, 3], T[1, 3], T[2, 3], *q]
        lines.append(str(fid) + "," + ",".join(f"{v:.9f}" for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> Trajectory:
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0] != "frame,x,y,z,qw,qx,qy,qz":
        raise DataError(f"{path}: missing trajectory header")
    frame_ids, poses = [], []
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != 8:
            raise DataError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        fid = int(parts[0])
        x, y, z, qw, qx, qy, qz = (float(p) for p in parts[1:])
        n = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if abs(n - 1.0) > 1e-6:
            raise DataError(f"{path}:{lineno}: quaternion norm {n} != 1")
        qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
        R = np.array(
            [
                [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz), 2 * (qx * qz + qw * qy)],
                [2 * (qx * qy + qw * qz), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx)],
                [2 * (qx * qz - qw * qy), 2 * (qy * qz + qw * qx), 1 - 2 * (qx * qx + qy * qy)],
            ]
        )
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = (x, y, z)
        frame_ids.append(fid)
        poses.append(T)
    return Trajectory(poses, frame_ids)


def write_trajectory_svg(path, pred: Trajectory, gt: Trajectory | None = None) -> None:
    """Top-down (x, z) plot of one or two trajectories as a standalone SVG."""
    size, margin = 500.0, 40.0
    tracks = [("pred", "#d62728", pred.translations())]
    if gt is not None:
        tracks.append(("gt", "#1f77b4", gt.translations()))
    pts = np.concatenate([t[2] for t in tracks])
    x, z = pts[:, 0], pts[:, 2]
    span = max(x.max() - x.min(), z.max() - z.min(), 1e-6)
    sx = lambda v: margin + (v - x.min()) / span * (size - 2 * margin)
    sz = lambda v: size - margin - (v - z.min()) / span * (size - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
        f'<rect width="{size:.0f}" height="{size:.0f}" fill="white"/>',
    ]
    for name, color, t in tracks:
        coords = " ".join(f"{sx(px):.2f},{sz(pz):.2f}" for px, pz in zip(t[:, 0], t[:, 2]))
        dash = ' stroke-dasharray="6 4"' if name == "gt" else ""
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>'
        )
        parts.append(
            f'<circle cx="{sx(t[0, 0]):.2f}" cy="{sz(t[0, 2]):.2f}" r="3" fill="{color}"/>'
        )
    legend_y = margin / 2
    for i, (name, color, _) in enumerate(tracks):
        x0 = margin + 90.0 * i
        parts.append(
            f'<line x1="{x0:.2f}" y1="{legend_y:.2f}" x2="{x0 + 24:.2f}" y2="{legend_y:.2f}" '
            f'stroke="{color}" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{x0 + 30:.2f}" y="{legend_y + 4:.2f}" font-size="12" '
            f'font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def fmt3(x: float) -> str:
    return f"{x:.3f}"


def fmt_mean_std(mean: float, std: float) -> str:
    return f"{mean:.3f} ± {std:.3f}"


def write_metrics_json(path, metrics: dict, config: dict | None = None) -> None:
    """Serialize a metrics dict (plus the config that produced it)."""
    payload = {"metrics": metrics}
    if config is not None:
        payload["config"] = config
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_kitti_scene(scene, root, sequence_id: str) -> Path:
    """Materialize a synthetic scene as an odometry-style directory tree.

    Layout under root:
      sequences/<id>/image_2/000000.png ...   8-bit RGB frames
      sequences/<id>/cam.txt                  pinhole intrinsics, one line
      sequences/<id>/depth/000000.png ...     16-bit millimeter depth
      poses/<id>.txt                          camera-to-world 3x4 rows
    """
    from .data.kitti import write_pose_file

    root = Path(root)
    seq_dir = root / "sequences" / sequence_id
    img_dir = seq_dir / "image_2"
    depth_dir = seq_dir / "depth"
    img_dir.mkdir(parents=True, exist_ok=True)
    depth_dir.mkdir(parents=True, exist_ok=True)
    (root / "poses").mkdir(parents=True, exist_ok=True)

    for k in range(scene.n_frames):
        write_image_png(img_dir / f"{k:06d}.png", scene.frames[k])
        write_depth_png16(depth_dir / f"{k:06d}.png", scene.depth_map(k))
    scene.intrinsics.to_file(seq_dir / "cam.txt")
    write_pose_file(root / "poses" / f"{sequence_id}.txt", scene.cam_to_world)
    return seq_dir

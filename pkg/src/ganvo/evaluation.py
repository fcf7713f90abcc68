"""Trajectory and depth evaluation protocols.

Two quantitative protocols:

* Scale-aligned absolute trajectory error over short windows: both
  trajectories are re-anchored to their first pose, a single least-squares
  scale on the predicted translations absorbs the monocular scale
  ambiguity, and the RMS translation residual is reported as mean and
  standard deviation over all sliding windows.
* Median-scaled depth metrics: predictions are multiplied by
  median(gt)/median(pred) over valid pixels, clamped to an evaluation
  range, and summarized by the seven standard error/accuracy columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .geometry import DepthMap, PoseVec6, pose_vec_to_matrix, se3_inverse, validate_se3

MIN_EVAL_DEPTH = 1e-3
DELTA_THRESHOLD = 1.25


@dataclass
class Trajectory:
    """Time-ordered absolute camera-to-world poses."""

    poses: list
    frame_ids: list = field(default_factory=list)

    def __post_init__(self):
        if not self.frame_ids:
            self.frame_ids = list(range(len(self.poses)))
        if len(self.frame_ids) != len(self.poses):
            raise ShapeError(
                f"{len(self.poses)} poses but {len(self.frame_ids)} frame ids"
            )
        if any(b <= a for a, b in zip(self.frame_ids, self.frame_ids[1:])):
            raise NumericError("trajectory frame ids must be strictly increasing")
        self.poses = [validate_se3(T) for T in self.poses]

    def __len__(self) -> int:
        return len(self.poses)

    def translations(self) -> np.ndarray:
        return np.array([T[:3, 3] for T in self.poses])

    def window(self, start: int, length: int) -> "Trajectory":
        return Trajectory(
            self.poses[start : start + length], self.frame_ids[start : start + length]
        )

    def anchored(self) -> "Trajectory":
        """Re-express all poses relative to the first one."""
        inv0 = se3_inverse(self.poses[0])
        return Trajectory([inv0 @ T for T in self.poses], list(self.frame_ids))


@dataclass
class AteResult:
    rmse: float
    scale: float
    degenerate: bool = False  # zero predicted motion against nonzero gt


def ate(pred: Trajectory, gt: Trajectory) -> AteResult:
    """Scale-aligned RMS translation error of one window.

    Both windows are re-anchored to their first pose, then a single scalar
    s* = sum(<t_p, t_g>) / sum(<t_p, t_p>) minimizes sum ||s t_p - t_g||^2
    in closed form.  Zero predicted motion with nonzero ground truth makes
    s* undefined; the unscaled RMS is returned with the degenerate flag.
    """
    if len(pred) != len(gt):
        raise ShapeError(f"window lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < 2:
        raise ShapeError("ATE needs at least 2 poses")
    tp = pred.anchored().translations()
    tg = gt.anchored().translations()
    denom = float(np.sum(tp * tp))
    if denom < 1e-18:
        scale = 1.0
        degenerate = bool(np.sum(tg * tg) > 0.0)
    else:
        scale = float(np.sum(tp * tg) / denom)
        degenerate = False
    residual = scale * tp - tg
    rmse = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return AteResult(rmse=rmse, scale=scale, degenerate=degenerate)


def windowed_ate(pred: Trajectory, gt: Trajectory, window: int = 5):
    """ATE over every sliding window; returns the list of AteResult."""
    if len(pred) != len(gt):
        raise ShapeError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    if len(pred) < window:
        raise ShapeError(f"need at least {window} poses, got {len(pred)}")
    return [
        ate(pred.window(s, window), gt.window(s, window))
        for s in range(len(pred) - window + 1)
    ]


def summarize_ate(results) -> dict:
    """Mean and population std of window RMSEs, report-ready."""
    vals = np.array([r.rmse for r in results])
    return {
        "mean": float(vals.mean()),
        "std": float(vals.std()),
        "windows": len(results),
        "degenerate_windows": int(sum(r.degenerate for r in results)),
    }


def accumulate_trajectory(relative_poses, convention: str = "direct", frame_ids=None) -> Trajectory:
    """Chain per-step relative motions into absolute poses, starting at I.

    With the 'direct' convention each relative pose maps the current frame
    into the previous one (current-to-previous), so absolute pose k is
    A_{k-1} @ M(rel_k); 'inverse' composes with M(rel_k)^{-1} instead, for
    chains expressed the other way around.
    """
    if convention not in ("direct", "inverse"):
        raise ShapeError(f"unknown composition convention {convention!r}")
    poses = [np.eye(4)]
    for rel in relative_poses:
        if isinstance(rel, PoseVec6):
            M = pose_vec_to_matrix(rel).data
        else:
            arr = np.asarray(getattr(rel, "data", rel), dtype=float)
            M = pose_vec_to_matrix(arr).data if arr.shape == (6,) else arr
        M = validate_se3(M)
        if convention == "inverse":
            M = se3_inverse(M)
        poses.append(poses[-1] @ M)
    return Trajectory(poses, frame_ids)


def relatives_from_trajectory(traj: Trajectory, convention: str = "direct") -> list:
    """Inverse of accumulate_trajectory: per-step PoseVec6 list."""
    from .geometry import matrix_to_pose_vec

    rels = []
    for a, b in zip(traj.poses, traj.poses[1:]):
        M = se3_inverse(a) @ b
        if convention == "inverse":
            M = se3_inverse(M)
        rels.append(matrix_to_pose_vec(M))
    return rels


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    scale: float = 1.0
    n_pixels: int = 0

    COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")

    def as_row(self) -> list:
        return [getattr(self, c) for c in self.COLUMNS]

    def __post_init__(self):
        if not (0.0 <= self.delta1 <= self.delta2 <= self.delta3 <= 1.0):
            raise NumericError(
                f"delta accuracies must be monotone in [0, 1]: "
                f"{self.delta1}, {self.delta2}, {self.delta3}"
            )


def depth_metrics(
    pred: DepthMap | np.ndarray,
    gt: DepthMap | np.ndarray,
    cap: float = 80.0,
    min_depth: float = MIN_EVAL_DEPTH,
) -> DepthMetrics:
    """Median-scaled error and accuracy metrics over valid gt pixels.

    Prediction is multiplied by median(gt)/median(pred), then both are
    clamped to [min_depth, cap].  Metrics follow the standard formulas;
    accuracy deltas count pixels with max(p/g, g/p) below 1.25^k.
    """
    if isinstance(pred, DepthMap):
        pred_data, pred_mask = pred.data, pred.mask
    else:
        pred_data, pred_mask = np.asarray(pred, dtype=float), None
    if isinstance(gt, DepthMap):
        gt_data, gt_mask = gt.data, gt.mask
    else:
        gt_data = np.asarray(gt, dtype=float)
        gt_mask = np.ones(gt_data.shape, dtype=bool)
    if pred_data.shape != gt_data.shape:
        raise ShapeError(f"depth shapes differ: {pred_data.shape} vs {gt_data.shape}")

    valid = gt_mask & (gt_data > min_depth) & (gt_data < cap)
    if pred_mask is not None:
        valid &= pred_mask
    if not valid.any():
        raise NumericError("no valid pixels to evaluate depth on")

    p = pred_data[valid]
    g = gt_data[valid]
    if np.any(p <= 0.0):
        raise NumericError("predicted depth must be positive on evaluated pixels")
    scale = float(np.median(g) / np.median(p))
    p = np.clip(p * scale, min_depth, cap)
    g = np.clip(g, min_depth, cap)

    err = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err * err / g)),
        rmse=float(np.sqrt(np.mean(err * err))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < DELTA_THRESHOLD)),
        delta2=float(np.mean(ratio < DELTA_THRESHOLD**2)),
        delta3=float(np.mean(ratio < DELTA_THRESHOLD**3)),
        scale=scale,
        n_pixels=int(valid.sum()),
    )


def spearman_rank_correlation(a, b) -> float:
    """Spearman rho via Pearson correlation of midranks."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size or a.size < 3:
        raise ShapeError("rank correlation needs two equal vectors of length >= 3")

    def midrank(x):
        order = np.argsort(x, kind="stable")
        ranks = np.empty(x.size)
        sx = x[order]
        i = 0
        while i < x.size:
            j = i
            while j + 1 < x.size and sx[j + 1] == sx[i]:
                j += 1
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
            i = j + 1
        return ranks

    ra, rb = midrank(a), midrank(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra * ra) * np.sum(rb * rb))
    if denom == 0.0:
        raise NumericError("rank correlation undefined for constant input")
    return float(np.sum(ra * rb) / denom)

"""Differentiable inverse warping and the photometric reconstruction loss.

The view-synthesis step: every pixel of the target frame is projected into
the source frame via predicted depth and relative pose, the source image is
bilinearly sampled at the projected (sub-pixel) coordinates, and the
resampled image is compared to the target under a masked L1 loss.  The
whole chain is differentiable with respect to depth, pose and the source
image itself, so gradients can flow back into both the depth generator and
the pose regressor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine.tensor import Tensor
from .errors import NoValidOverlapError, ShapeError
from .geometry import CameraIntrinsics, DepthMap, Z_MIN_DEFAULT, pose_vec_to_matrix, project_pixels

# Sub-pixel offsets closer to a lattice point than this snap to it exactly,
# which makes warping by the identity pose reproduce in-bounds pixels
# bit-for-bit instead of leaving them at the mercy of rounding noise.
SNAP_EPS = 1e-9


def _bilinear_forward(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Shared forward math: values, in-bounds mask and sampling aux data."""
    c, h, w = img.shape
    snap_u = np.rint(u)
    snapped_u = np.where(np.abs(u - snap_u) < SNAP_EPS, snap_u, u)
    snap_v = np.rint(v)
    snapped_v = np.where(np.abs(v - snap_v) < SNAP_EPS, snap_v, v)

    inside = (
        (snapped_u >= 0.0)
        & (snapped_u <= w - 1.0)
        & (snapped_v >= 0.0)
        & (snapped_v <= h - 1.0)
    )
    uc = np.clip(snapped_u, 0.0, w - 1.0)
    vc = np.clip(snapped_v, 0.0, h - 1.0)

    u0 = np.minimum(np.floor(uc), w - 2.0).astype(int) if w > 1 else np.zeros_like(uc, dtype=int)
    v0 = np.minimum(np.floor(vc), h - 2.0).astype(int) if h > 1 else np.zeros_like(vc, dtype=int)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    a = uc - u0  # in [0, 1]
    b = vc - v0

    w00 = (1.0 - a) * (1.0 - b)
    w01 = a * (1.0 - b)
    w10 = (1.0 - a) * b
    w11 = a * b
    vals = (
        w00 * img[:, v0, u0]
        + w01 * img[:, v0, u1]
        + w10 * img[:, v1, u0]
        + w11 * img[:, v1, u1]
    )
    aux = (u0, u1, v0, v1, w00, w01, w10, w11, a, b, inside)
    return vals, aux


def _coord_gradients(img_d: np.ndarray, aux):
    """d(sample)/du and d(sample)/dv of the bilinear surface, per channel.

    Module-level so tests can monkeypatch it to verify the gradient checker
    actually catches a corrupted backward pass.
    """
    u0, u1, v0, v1, _, _, _, _, a, b, _ = aux
    d00 = img_d[:, v0, u0]
    d01 = img_d[:, v0, u1]
    d10 = img_d[:, v1, u0]
    d11 = img_d[:, v1, u1]
    dval_du = (1.0 - b) * (d01 - d00) + b * (d11 - d10)
    dval_dv = (1.0 - a) * (d10 - d00) + a * (d11 - d01)
    return dval_du, dval_dv


def bilinear_sample(img, u, v):
    """Sample `img` (C, H, W) at continuous pixel coordinates.

    `u`, `v` are flat Tensors or arrays of equal length; the result is a
    (C, len(u)) Tensor.  Out-of-bounds coordinates are clamped for the
    value computation and reported through the second return, a boolean
    in-bounds mask.  Gradients propagate to `img`, `u` and `v`; the
    coordinate gradient is the analytic derivative of the bilinear surface,
    taken as zero where clamping froze the sample.
    """
    if not isinstance(img, Tensor):
        img = Tensor(np.asarray(img, dtype=float))
    if img.ndim != 3:
        raise ShapeError(f"bilinear_sample expects (C, H, W), got {img.shape}")
    if not isinstance(u, Tensor):
        u = Tensor(np.asarray(u, dtype=float))
    if not isinstance(v, Tensor):
        v = Tensor(np.asarray(v, dtype=float))
    if u.shape != v.shape or u.ndim != 1:
        raise ShapeError(f"u, v must be equal-length 1-D, got {u.shape} / {v.shape}")

    c, h, w = img.shape
    vals, aux = _bilinear_forward(img.data, u.data, v.data)
    u0, u1, v0, v1, w00, w01, w10, w11, a, b, inside = aux

    parents = [img, u, v]
    out = Tensor.from_op(vals, parents, "bilinear_sample", None)
    if out._backward is None and not out.requires_grad:
        return out, inside

    img_d = img.data

    def _backward(g):
        if img.requires_grad:
            gi = np.zeros_like(img_d)
            for weight, vi, ui in ((w00, v0, u0), (w01, v0, u1), (w10, v1, u0), (w11, v1, u1)):
                np.add.at(gi, (slice(None), vi, ui), g * weight)
            img.accumulate_grad(gi)
        if u.requires_grad or v.requires_grad:
            dval_du, dval_dv = _coord_gradients(img_d, aux)
            # freeze the gradient where the coordinate was clamped
            live_u = ((u.data > 0.0) & (u.data < w - 1.0)).astype(img_d.dtype)
            live_v = ((v.data > 0.0) & (v.data < h - 1.0)).astype(img_d.dtype)
            if u.requires_grad:
                u.accumulate_grad((g * dval_du).sum(axis=0) * live_u)
            if v.requires_grad:
                v.accumulate_grad((g * dval_dv).sum(axis=0) * live_v)

    out._backward = _backward
    return out, inside


@dataclass
class WarpResult:
    """Synthesized view plus per-pixel validity."""

    image: Tensor  # (C, H, W)
    mask: np.ndarray  # (H, W) bool, projection valid AND sample in-bounds
    u: Tensor  # (H*W,) source-frame sample columns
    v: Tensor  # (H*W,) source-frame sample rows

    @property
    def coverage(self) -> float:
        return float(self.mask.mean())


def inverse_warp(
    source,
    depth,
    pose,
    K: CameraIntrinsics,
    z_min: float = Z_MIN_DEFAULT,
) -> WarpResult:
    """Reconstruct the target view by resampling `source`.

    `source` is the source image (C, H, W); `depth` the target-frame depth
    (Tensor, ndarray or DepthMap); `pose` the 6-vector (or 4x4 transform
    Tensor/ndarray) mapping target coordinates into the source camera.
    """
    if not isinstance(source, Tensor):
        source = Tensor(np.asarray(source, dtype=float))
    if source.ndim != 3:
        raise ShapeError(f"source image must be (C, H, W), got {source.shape}")
    c, h, w = source.shape
    if (w, h) != (K.width, K.height):
        raise ShapeError(f"source {w}x{h} does not match intrinsics {K.width}x{K.height}")

    if isinstance(pose, Tensor) and pose.shape == (4, 4):
        T = pose
    elif isinstance(pose, np.ndarray) and pose.shape == (4, 4):
        T = Tensor(pose)
    else:
        T = pose_vec_to_matrix(pose)

    u, v, proj_valid = project_pixels(K, T, depth, z_min=z_min)
    sampled, inside = bilinear_sample(source, u, v)
    mask = (proj_valid & inside).reshape(h, w)
    return WarpResult(image=sampled.reshape(c, h, w), mask=mask, u=u, v=v)


def photometric_loss(synthesized, target, mask=None) -> Tensor:
    """Mean absolute intensity difference over valid pixels.

    `mask` is an (H, W) boolean array restricting the mean to pixels the
    warp could actually explain; channels of a masked pixel all count.
    Raises NoValidOverlapError when the mask leaves nothing to compare,
    since a mean over zero pixels has no meaningful value or gradient.
    """
    if not isinstance(synthesized, Tensor):
        synthesized = Tensor(np.asarray(synthesized, dtype=float))
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=float))
    if synthesized.shape != target.shape:
        raise ShapeError(
            f"image shapes differ: {synthesized.shape} vs {target.shape}"
        )
    diff = (synthesized - target).abs()
    if mask is None:
        return diff.mean()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != synthesized.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} does not match image {synthesized.shape}")
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise NoValidOverlapError(
            "no valid pixels: the projected view does not overlap the target"
        )
    c = synthesized.shape[0] if synthesized.ndim == 3 else 1
    weights = mask.astype(diff.data.dtype)
    return (diff * weights).sum() * (1.0 / (n_valid * c))


def composite_with_mask(synth: Tensor, real: np.ndarray, mask: np.ndarray) -> Tensor:
    """Fill invalid warp pixels from the real image, keeping gradients.

    The discriminator should judge image realism, not the geometry of
    missing data, so pixels the warp could not produce are taken verbatim
    from the real target.  Gradient flows only through the valid region.
    """
    if synth.shape != real.shape:
        raise ShapeError(f"composite shapes differ: {synth.shape} vs {real.shape}")
    m = mask.astype(synth.data.dtype)
    fill = Tensor(real * (1.0 - m))
    return synth * m + fill

"""Registered finite-difference checks and desk-scale recovery experiments.

Every differentiable op registers one case; ``run_all`` powers the
``gradcheck`` CLI subcommand.  Cases build in 64-bit and condition the
output with a random probe so cancellation cannot hide a wrong gradient.
``recover_pose`` is the photometric pose-alignment experiment used to
sanity-check the warping chain end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SceneConfig, generate_synthetic_scene
from .engine import Tensor
from .engine.functional import RunningStats, batch_norm, conv2d, conv_transpose2d, linear, lstm_cell
from .engine.gradcheck import REGISTRY, max_relative_error, register_case, run_all, run_case
from .engine.optim import Adam
from .geometry import disparity_to_depth, pose_vec_to_matrix, project_pixels
from .models import build_models, toy_config
from .training import adversarial_loss, discriminator_loss, total_loss
from .warp import bilinear_sample, composite_with_mask, inverse_warp, photometric_loss

__all__ = ["REGISTRY", "run_all", "run_case", "recover_pose", "PoseRecovery"]


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _probe(rng, tensor: Tensor) -> np.ndarray:
    return rng.uniform(0.5, 1.5, tensor.shape)


def _elementwise(name, fn, lo=-1.0, hi=1.0):
    """Register `(probe * fn(x)).sum()` for an elementwise op."""

    def build(rng):
        x = _t(rng, 3, 5, lo=lo, hi=hi)
        p = _probe(rng, x)

        def f():
            return (fn(x) * p).sum()

        return f, [x]

    REGISTRY_NAME = name
    register_case(REGISTRY_NAME)(build)


_elementwise("neg", lambda x: -x)
_elementwise("abs", lambda x: x.abs(), lo=0.2, hi=1.0)  # keep clear of the kink
_elementwise("exp", lambda x: x.exp())
_elementwise("log", lambda x: x.log(), lo=0.2, hi=2.0)
_elementwise("sqrt", lambda x: x.sqrt(), lo=0.2, hi=2.0)
_elementwise("sin", lambda x: x.sin())
_elementwise("cos", lambda x: x.cos())
_elementwise("tanh", lambda x: x.tanh())
_elementwise("sigmoid", lambda x: x.sigmoid())
_elementwise("relu", lambda x: x.relu(), lo=0.2, hi=1.0)
_elementwise("relu_negative", lambda x: x.relu(), lo=-1.0, hi=-0.2)
_elementwise("leaky_relu", lambda x: x.leaky_relu(0.2), lo=0.2, hi=1.0)
_elementwise("leaky_relu_negative", lambda x: x.leaky_relu(0.2), lo=-1.0, hi=-0.2)
_elementwise("clamp", lambda x: x.clamp(-2.0, 2.0))  # interior: identity region
_elementwise("pow", lambda x: x ** 3)
_elementwise("reshape", lambda x: x.reshape(5, 3).reshape(3, 5))
_elementwise("transpose", lambda x: x.transpose().transpose())


@register_case("add")
def _add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    p = _probe(rng, a)

    def f():
        return ((a + b) * p).sum()

    return f, [a, b]


@register_case("sub")
def _sub(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    p = _probe(rng, a)

    def f():
        return ((a - b) * p).sum()

    return f, [a, b]


@register_case("mul")
def _mul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    p = _probe(rng, a)

    def f():
        return ((a * b) * p).sum()

    return f, [a, b]


@register_case("div")
def _div(rng):
    a = _t(rng, 3, 4)
    b = _t(rng, 3, 4, lo=0.5, hi=2.0)
    p = _probe(rng, a)

    def f():
        return ((a / b) * p).sum()

    return f, [a, b]


@register_case("broadcast_add")
def _broadcast_add(rng):
    a = _t(rng, 2, 3, 4)
    b = _t(rng, 1, 3, 1)
    p = rng.uniform(0.5, 1.5, (2, 3, 4))

    def f():
        return ((a + b) * p).sum()

    return f, [a, b]


@register_case("getitem")
def _getitem(rng):
    x = _t(rng, 4, 6)
    p = rng.uniform(0.5, 1.5, (2, 3))

    def f():
        return (x[1:3, 2:5:1][:, :3] * p).sum()

    return f, [x]


@register_case("sum_axis")
def _sum_axis(rng):
    x = _t(rng, 3, 4, 5)
    p = rng.uniform(0.5, 1.5, (3, 5))

    def f():
        return (x.sum(axis=1) * p).sum()

    return f, [x]


@register_case("mean_axis")
def _mean_axis(rng):
    x = _t(rng, 3, 4, 5)
    p = rng.uniform(0.5, 1.5, (4,))

    def f():
        return (x.mean(axis=(0, 2)) * p).sum()

    return f, [x]


@register_case("matmul")
def _matmul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 5)
    p = rng.uniform(0.5, 1.5, (3, 5))

    def f():
        return (a.matmul(b) * p).sum()

    return f, [a, b]


@register_case("stack")
def _stack(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    p = rng.uniform(0.5, 1.5, (2, 3, 4))

    def f():
        return (Tensor.stack([a, b]) * p).sum()

    return f, [a, b]


@register_case("concat")
def _concat(rng):
    a, b = _t(rng, 3, 4), _t(rng, 2, 4)
    p = rng.uniform(0.5, 1.5, (5, 4))

    def f():
        return (Tensor.concat([a, b], axis=0) * p).sum()

    return f, [a, b]


@register_case("conv2d")
def _conv2d(rng):
    x = _t(rng, 2, 3, 6, 8)
    w = _t(rng, 4, 3, 4, 4, lo=-0.5, hi=0.5)
    p = rng.uniform(0.5, 1.5, (2, 4, 3, 4))

    def f():
        return (conv2d(x, w, stride=2, padding=1) * p).sum()

    return f, [x, w]


@register_case("conv_transpose2d")
def _conv_transpose2d(rng):
    x = _t(rng, 2, 3, 3, 4)
    w = _t(rng, 3, 4, 4, 4, lo=-0.5, hi=0.5)
    p = rng.uniform(0.5, 1.5, (2, 4, 6, 8))

    def f():
        return (conv_transpose2d(x, w, stride=2, padding=1) * p).sum()

    return f, [x, w]


@register_case("batch_norm")
def _batch_norm(rng):
    x = _t(rng, 6, 3, 4, 5)
    gamma = _t(rng, 3, lo=0.5, hi=1.5)
    beta = _t(rng, 3, lo=-0.5, hi=0.5)
    p = rng.uniform(0.5, 1.5, (6, 3, 4, 5))

    def f():
        # fresh stats per call: the running update is a side effect, not output
        return (batch_norm(x, gamma, beta, RunningStats(3), training=True) * p).sum()

    return f, [x, gamma, beta]


@register_case("linear")
def _linear(rng):
    x = _t(rng, 4, 6)
    w = _t(rng, 6, 3, lo=-0.5, hi=0.5)
    b = _t(rng, 3, lo=-0.5, hi=0.5)
    p = rng.uniform(0.5, 1.5, (4, 3))

    def f():
        return (linear(x, w, b) * p).sum()

    return f, [x, w, b]


@register_case("lstm_cell")
def _lstm_cell(rng):
    x = _t(rng, 2, 5)
    h = _t(rng, 2, 4, lo=-0.5, hi=0.5)
    c = _t(rng, 2, 4, lo=-0.5, hi=0.5)
    w_x = _t(rng, 5, 16, lo=-0.5, hi=0.5)
    w_h = _t(rng, 4, 16, lo=-0.5, hi=0.5)
    bias = _t(rng, 16, lo=-0.5, hi=0.5)
    p = rng.uniform(0.5, 1.5, (2, 4))

    def f():
        h_new, c_new = lstm_cell(x, h, c, w_x, w_h, bias)
        return (h_new * p).sum() + (c_new * p).sum()

    return f, [x, h, c, w_x, w_h, bias]


@register_case("disparity_to_depth")
def _disparity_to_depth(rng):
    raw = _t(rng, 4, 6, lo=-0.9, hi=0.9)
    p = rng.uniform(0.5, 1.5, (4, 6))

    def f():
        return (disparity_to_depth(raw) * p).sum()

    return f, [raw]


@register_case("pose_vec_to_matrix")
def _pose_vec_to_matrix(rng):
    pose = _t(rng, 6, lo=-0.3, hi=0.3)
    p = rng.uniform(0.5, 1.5, (4, 4))

    def f():
        return (pose_vec_to_matrix(pose) * p).sum()

    return f, [pose]


def _warp_inputs(rng):
    scene = generate_synthetic_scene(
        int(rng.integers(1 << 31)),
        SceneConfig(motion="lateral", step=0.2, n_frames=3, kind="slanted"),
    )
    sample = scene.sample_sequences(3)[0]
    pose = Tensor(
        sample.source_pose(0).as_array() + rng.uniform(-0.005, 0.005, 6),
        requires_grad=True,
    )
    depth = Tensor(
        scene.depths[sample.target_index] * rng.uniform(0.98, 1.02),
        requires_grad=True,
    )
    return scene, sample, pose, depth


@register_case("project_pixels")
def _project_pixels(rng):
    scene, sample, pose, depth = _warp_inputs(rng)
    p = rng.uniform(0.5, 1.5, depth.size)  # projections come back flattened

    def f():
        u, v, z = project_pixels(sample.intrinsics, pose_vec_to_matrix(pose), depth)
        return (u * p).sum() + (v * p).sum() + (z * p).sum()

    return f, [pose, depth]


@register_case("bilinear_sample")
def _bilinear_sample(rng):
    img = _t(rng, 3, 8, 10, lo=0.0, hi=1.0)
    # offsets stay away from integer grid lines so the kernel is smooth
    u = Tensor(rng.uniform(1.3, 8.7, 30), requires_grad=True)
    v = Tensor(rng.uniform(1.3, 6.7, 30), requires_grad=True)
    p = rng.uniform(0.5, 1.5, (3, 30))

    def f():
        sampled, _ = bilinear_sample(img, u, v)
        return (sampled * p).sum()

    return f, [img, u, v]


@register_case("photometric_loss", tol=1e-3)
def _photometric_loss(rng):
    scene, sample, pose, depth = _warp_inputs(rng)

    def f():
        warp = inverse_warp(sample.sources()[0], depth, pose, sample.intrinsics)
        return photometric_loss(warp.image, sample.target, warp.mask)

    return f, [pose, depth]


@register_case("composite_with_mask")
def _composite_with_mask(rng):
    synth = _t(rng, 3, 5, 6, lo=0.0, hi=1.0)
    real = rng.uniform(0.0, 1.0, (3, 5, 6))
    mask = rng.uniform(0, 1, (5, 6)) > 0.4
    p = rng.uniform(0.5, 1.5, (3, 5, 6))

    def f():
        return (composite_with_mask(synth, real, mask) * p).sum()

    return f, [synth]


def _stub_disc(rng, shape):
    """Sigmoid-linear probability head over flattened images."""
    w = Tensor(rng.uniform(-0.2, 0.2, (int(np.prod(shape)), 1)), requires_grad=True)

    def disc(x):
        flat = x.reshape(x.shape[0], -1) if x.ndim == 4 else x.reshape(1, -1)
        out = flat.matmul(w).sigmoid()
        return out.reshape(out.shape[:1])

    return disc, w


@register_case("adversarial_loss")
def _adversarial_loss(rng):
    fake = _t(rng, 2, 3, 4, 5, lo=0.0, hi=1.0)
    disc, w = _stub_disc(rng, (3, 4, 5))

    def f():
        return adversarial_loss(disc, fake)

    return f, [fake, w]


@register_case("discriminator_loss")
def _discriminator_loss(rng):
    real = _t(rng, 2, 3, 4, 5, lo=0.0, hi=1.0)
    fake = Tensor(rng.uniform(0.0, 1.0, (2, 3, 4, 5)))
    disc, w = _stub_disc(rng, (3, 4, 5))

    def f():
        return discriminator_loss(disc, real, fake)

    return f, [real, w]


@register_case("pipeline", tol=1e-3)
def _pipeline(rng):
    """Pose and depth through warp, reconstruction, and both loss branches."""
    scene, sample, pose, depth = _warp_inputs(rng)
    models = build_models(toy_config(), seed=0)
    models.eval()

    def f():
        warp = inverse_warp(sample.sources()[0], depth, pose, sample.intrinsics)
        l_g = photometric_loss(warp.image, sample.target, warp.mask)
        fake = composite_with_mask(warp.image, sample.target, warp.mask)
        l_d = adversarial_loss(models.disc, fake.reshape((1,) + fake.shape))
        return total_loss(l_g, l_d, 0.5)

    return f, [pose, depth]


@dataclass(frozen=True)
class PoseRecovery:
    """Outcome of photometric pose alignment against a known ground truth."""

    pose: np.ndarray
    translation_error: float
    rotation_error: float
    iterations: int
    converged: bool


def recover_pose(
    source,
    target,
    depth,
    intrinsics,
    init_pose,
    gt_pose,
    lr: float = 0.005,
    max_iters: int = 2000,
    tol: float = 1e-2,
) -> PoseRecovery:
    """Gradient-descend the 6 pose parameters to re-align source onto target.

    Depth stays fixed; only the pose vector is optimized.  Convergence is
    measured against `gt_pose` in max-abs translation units and radians.
    """
    gt = np.asarray(gt_pose, dtype=float)
    pose = Tensor(np.asarray(init_pose, dtype=float).copy(), requires_grad=True)
    opt = Adam({"pose": pose}, lr=lr)
    depth_t = depth if isinstance(depth, Tensor) else Tensor(np.asarray(depth, dtype=float))

    def errors():
        t_err = float(np.max(np.abs(pose.data[:3] - gt[:3])))
        r_err = float(np.max(np.abs(pose.data[3:] - gt[3:])))
        return t_err, r_err

    t_err, r_err = errors()
    if t_err < tol and r_err < tol:
        return PoseRecovery(pose.data.copy(), t_err, r_err, 0, True)

    iterations = 0
    for iterations in range(1, max_iters + 1):
        warp = inverse_warp(source, depth_t, pose, intrinsics)
        loss = photometric_loss(warp.image, target, warp.mask)
        opt.zero_grad()
        loss.backward()
        opt.step()
        t_err, r_err = errors()
        if t_err < tol and r_err < tol:
            break
    t_err, r_err = errors()
    return PoseRecovery(
        pose=pose.data.copy(),
        translation_error=t_err,
        rotation_error=r_err,
        iterations=iterations,
        converged=t_err < tol and r_err < tol,
    )

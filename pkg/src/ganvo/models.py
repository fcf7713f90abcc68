"""Depth GAN (encoder, generator, discriminator) and the recurrent pose net.

Architecture is config-driven.  Two shipped presets: a desk-scale toy
(4 conv levels, base width 16, 16x48 inputs) and a full-scale shape
(7 levels, base width 32, 128x416 inputs).  Every strided level halves
the spatial size with a 4x4/stride-2/pad-1 convolution; the decoder
mirrors the encoder chain exactly, widening the kernel to 5 on levels
whose input size was odd so output sizes match the encoder input sizes
pixel for pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, batch_norm, conv2d, conv_transpose2d, linear, lstm_cell
from .engine.functional import RunningStats
from .errors import ConfigError, ShapeError
from .geometry import DISP_MAX_DEFAULT, DISP_MIN_DEFAULT, disparity_to_depth

LEAKY_SLOPE = 0.2
POSE_OUTPUT_SCALE = 0.01  # keeps initial warps near identity
CONV_INIT_STD = 0.02


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _down(size: int) -> int:
    # 4x4 conv, stride 2, pad 1
    return (size - 2) // 2 + 1


def _up_kernel(size_in: int, size_out: int) -> int:
    # stride-2 pad-1 transpose conv: out = 2*in - 4 + k
    k = size_out - 2 * size_in + 4
    if k < 3:
        raise ConfigError(f"cannot upsample {size_in} -> {size_out} with stride 2")
    return k


def spatial_chain(height: int, width: int, levels: int) -> list:
    """Per-level (h, w) sizes through `levels` stride-2 convolutions."""
    chain = [(height, width)]
    for _ in range(levels):
        h, w = chain[-1]
        h2, w2 = _down(h), _down(w)
        if h2 < 1 or w2 < 1:
            raise ConfigError(f"image {height}x{width} too small for {levels} conv levels")
        chain.append((h2, w2))
    return chain


class Module:
    """Named parameters, buffers, and submodules with train/eval modes."""

    def __init__(self):
        self.training = True
        self._params = {}
        self._buffers = {}
        self._modules = {}

    def _param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(array, dtype=float), requires_grad=True)
        self._params[name] = t
        return t

    def _buffer(self, name: str, obj):
        self._buffers[name] = obj
        return obj

    def _child(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> dict:
        out = {prefix + n: t for n, t in self._params.items()}
        for n, m in self._modules.items():
            out.update(m.named_parameters(prefix + n + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict:
        out = {prefix + n: b for n, b in self._buffers.items()}
        for n, m in self._modules.items():
            out.update(m.named_buffers(prefix + n + "."))
        return out

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.named_parameters().values())

    def state(self) -> dict:
        """Flat name -> array snapshot of parameters and buffers."""
        out = {n: t.data.copy() for n, t in self.named_parameters().items()}
        for n, b in self.named_buffers().items():
            out[n + ".mean"] = b.mean.copy()
            out[n + ".var"] = b.var.copy()
        return out

    def load_state(self, state: dict) -> None:
        expected = self.state()
        missing = sorted(set(expected) - set(state))
        extra = sorted(set(state) - set(expected))
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {missing}, unexpected {extra}")
        for n, t in self.named_parameters().items():
            arr = np.asarray(state[n], dtype=float)
            if arr.shape != t.data.shape:
                raise ShapeError(f"{n}: stored shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr
        for n, b in self.named_buffers().items():
            b.mean = np.asarray(state[n + ".mean"], dtype=float).copy()
            b.var = np.asarray(state[n + ".var"], dtype=float).copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0, bias=True):
        super().__init__()
        kh, kw = _pair(kernel)
        self.stride, self.padding, self.cout = stride, padding, cout
        self.w = self._param("w", rng.normal(0.0, CONV_INIT_STD, (cout, cin, kh, kw)))
        self.b = self._param("b", np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = conv2d(x, self.w, stride=self.stride, padding=self.padding)
        if self.b is not None:
            out = out + self.b.reshape(1, self.cout, 1, 1)
        return out


class ConvTranspose2d(Module):
    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0, bias=True):
        super().__init__()
        kh, kw = _pair(kernel)
        self.stride, self.padding, self.cout = stride, padding, cout
        self.w = self._param("w", rng.normal(0.0, CONV_INIT_STD, (cin, cout, kh, kw)))
        self.b = self._param("b", np.zeros(cout)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = conv_transpose2d(x, self.w, stride=self.stride, padding=self.padding)
        if self.b is not None:
            out = out + self.b.reshape(1, self.cout, 1, 1)
        return out


class BatchNorm2d(Module):
    def __init__(self, rng, channels, momentum=0.1):
        super().__init__()
        self.gamma = self._param("gamma", rng.normal(1.0, CONV_INIT_STD, channels))
        self.beta = self._param("beta", np.zeros(channels))
        self.running = self._buffer("running", RunningStats(channels))
        self.momentum = momentum

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running, self.training, self.momentum)


class Linear(Module):
    def __init__(self, rng, fan_in, fan_out):
        super().__init__()
        bound = 1.0 / np.sqrt(fan_in)
        self.w = self._param("w", rng.uniform(-bound, bound, (fan_in, fan_out)))
        self.b = self._param("b", np.zeros(fan_out))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)


class LSTMLayer(Module):
    """One recurrent layer driven step by step."""

    def __init__(self, rng, input_size, hidden):
        super().__init__()
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        self.w_x = self._param("w_x", rng.uniform(-bound, bound, (input_size, 4 * hidden)))
        self.w_h = self._param("w_h", rng.uniform(-bound, bound, (hidden, 4 * hidden)))
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0  # open forget gate at init
        self.bias = self._param("bias", bias)

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        return lstm_cell(x, h, c, self.w_x, self.w_h, self.bias)


@dataclass(frozen=True)
class NetworkConfig:
    """Widths and sizes for all four networks."""

    width: int = 48
    height: int = 16
    enc_channels: tuple = (16, 32, 64, 128)
    latent_dim: int = 64
    disc_channels: tuple = (16, 32, 64)
    pose_channels: tuple = (32, 64)
    pose_features: int = 32
    lstm_hidden: int = 64
    n_frames: int = 3
    d_min: float = DISP_MIN_DEFAULT
    d_max: float = DISP_MAX_DEFAULT
    # Damping on the raw pose output. Gradients into the head scale with it,
    # so pick it jointly with the learning rate: the full-scale recipe pairs
    # 0.01 with lr 0.1; the toy recipe pairs 0.1 with lr 1e-3.
    pose_scale: float = POSE_OUTPUT_SCALE

    def __post_init__(self):
        if self.n_frames < 2:
            raise ConfigError(f"n_frames must be >= 2, got {self.n_frames}")
        for name in ("enc_channels", "disc_channels", "pose_channels"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must be non-empty")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.pose_scale <= 0:
            raise ConfigError(f"pose_scale must be positive, got {self.pose_scale}")
        # raises ConfigError if any tower underflows
        spatial_chain(self.height, self.width, len(self.enc_channels))
        spatial_chain(self.height, self.width, len(self.disc_channels))
        spatial_chain(self.height, self.width, len(self.pose_channels) + 1)


def toy_config(**overrides) -> NetworkConfig:
    overrides.setdefault("pose_scale", 0.1)
    return NetworkConfig(**overrides)


def full_config(**overrides) -> NetworkConfig:
    base = dict(
        width=416,
        height=128,
        enc_channels=(32, 64, 128, 256, 512, 512, 512),
        latent_dim=1024,
        disc_channels=(32, 64, 128, 256, 512),
        pose_channels=(32, 64, 128, 256),
        pose_features=256,
        lstm_hidden=512,
    )
    base.update(overrides)
    return NetworkConfig(**base)


class DepthEncoder(Module):
    """Strided conv stack mapping an image to a latent vector z."""

    def __init__(self, rng, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chain = spatial_chain(cfg.height, cfg.width, len(cfg.enc_channels))
        self.blocks = []
        cin = 3
        for i, cout in enumerate(cfg.enc_channels):
            conv = self._child(f"conv{i}", Conv2d(rng, cin, cout, 4, stride=2, padding=1))
            bn = self._child(f"bn{i}", BatchNorm2d(rng, cout)) if i > 0 else None
            self.blocks.append((conv, bn))
            cin = cout
        self.bottleneck_spatial = chain[-1]
        self.to_latent = self._child(
            "latent", Conv2d(rng, cin, cfg.latent_dim, self.bottleneck_spatial)
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1:] != (3, self.cfg.height, self.cfg.width):
            raise ShapeError(
                f"encoder expects (B, 3, {self.cfg.height}, {self.cfg.width}), got {x.shape}"
            )
        for conv, bn in self.blocks:
            x = conv(x)
            if bn is not None:
                x = bn(x)
            x = x.leaky_relu(LEAKY_SLOPE)
        return self.to_latent(x)  # (B, latent, 1, 1)


class DepthDecoder(Module):
    """Fractional-strided conv stack mapping z to a 1-channel tanh map."""

    def __init__(self, rng, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chain = spatial_chain(cfg.height, cfg.width, len(cfg.enc_channels))
        self.blocks = []
        # mirror: latent -> deepest conv output, then walk the chain back up
        widths = (1,) + cfg.enc_channels  # level i consumes widths[i+1], emits widths[i]
        first = self._child(
            "deconv_latent",
            ConvTranspose2d(rng, cfg.latent_dim, cfg.enc_channels[-1], chain[-1]),
        )
        self.blocks.append((first, self._child("bn_latent", BatchNorm2d(rng, cfg.enc_channels[-1]))))
        for i in reversed(range(len(cfg.enc_channels))):
            (h_out, w_out), (h_in, w_in) = chain[i], chain[i + 1]
            kernel = (_up_kernel(h_in, h_out), _up_kernel(w_in, w_out))
            cout = widths[i]
            deconv = self._child(
                f"deconv{i}",
                ConvTranspose2d(rng, widths[i + 1], cout, kernel, stride=2, padding=1),
            )
            bn = self._child(f"bn{i}", BatchNorm2d(rng, cout)) if i > 0 else None
            self.blocks.append((deconv, bn))

    def forward(self, z: Tensor) -> Tensor:
        x = z
        last = len(self.blocks) - 1
        for i, (deconv, bn) in enumerate(self.blocks):
            x = deconv(x)
            if i == last:
                return x.tanh()
            if bn is not None:
                x = bn(x)
            x = x.relu()
        raise AssertionError("unreachable")


class DepthGenerator(Module):
    """Encoder + generator pair predicting a depth map from one image."""

    def __init__(self, rng, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = self._child("enc", DepthEncoder(rng, cfg))
        self.decoder = self._child("gen", DepthDecoder(rng, cfg))

    def encode(self, image: Tensor) -> Tensor:
        single = image.ndim == 3
        x = image.reshape((1,) + image.shape) if single else image
        z = self.encoder(x)
        z = z.reshape(z.shape[:2])
        return z.reshape((z.shape[1],)) if single else z

    def forward(self, images: Tensor):
        """(B, 3, H, W) -> (depth (B, 1, H, W), raw tanh map, z (B, latent))."""
        z = self.encoder(images)
        raw = self.decoder(z)
        depth = disparity_to_depth(raw, self.cfg.d_min, self.cfg.d_max)
        return depth, raw, z.reshape(z.shape[:2])


class Discriminator(Module):
    """Strided conv stack ending in a sigmoid likelihood; no dense layers."""

    def __init__(self, rng, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chain = spatial_chain(cfg.height, cfg.width, len(cfg.disc_channels))
        self.blocks = []
        cin = 3
        for i, cout in enumerate(cfg.disc_channels):
            conv = self._child(f"conv{i}", Conv2d(rng, cin, cout, 4, stride=2, padding=1))
            bn = self._child(f"bn{i}", BatchNorm2d(rng, cout)) if i > 0 else None
            self.blocks.append((conv, bn))
            cin = cout
        self.head = self._child("head", Conv2d(rng, cin, 1, chain[-1]))

    def forward(self, image: Tensor) -> Tensor:
        single = image.ndim == 3
        x = image.reshape((1,) + image.shape) if single else image
        if x.shape[1:] != (3, self.cfg.height, self.cfg.width):
            raise ShapeError(
                f"discriminator expects (B, 3, {self.cfg.height}, {self.cfg.width}), got {image.shape}"
            )
        for conv, bn in self.blocks:
            x = conv(x)
            if bn is not None:
                x = bn(x)
            x = x.leaky_relu(LEAKY_SLOPE)
        p = self.head(x).sigmoid().reshape((x.shape[0],))
        return p.reshape(()) if single else p


class PoseRegressor(Module):
    """Conv tower over channel-stacked frames, two LSTMs, linear head.

    The tower ends in N groups of `pose_features` channels; global average
    pooling turns each group into one feature vector, giving a length-N
    sequence that the two stacked LSTM layers consume in frame order.  The
    head emits 6*(N-1) values, damped by `cfg.pose_scale`.
    """

    def __init__(self, rng, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = []
        cin = 3 * cfg.n_frames
        for i, cout in enumerate(cfg.pose_channels):
            conv = self._child(f"conv{i}", Conv2d(rng, cin, cout, 4, stride=2, padding=1))
            bn = self._child(f"bn{i}", BatchNorm2d(rng, cout)) if i > 0 else None
            self.blocks.append((conv, bn))
            cin = cout
        grouped = cfg.n_frames * cfg.pose_features
        self.group_conv = self._child("group", Conv2d(rng, cin, grouped, 4, stride=2, padding=1))
        self.group_bn = self._child("group_bn", BatchNorm2d(rng, grouped))
        self.lstm1 = self._child("lstm1", LSTMLayer(rng, cfg.pose_features, cfg.lstm_hidden))
        self.lstm2 = self._child("lstm2", LSTMLayer(rng, cfg.lstm_hidden, cfg.lstm_hidden))
        self.head = self._child("head", Linear(rng, cfg.lstm_hidden, 6 * (cfg.n_frames - 1)))

    def forward(self, stacked: Tensor) -> Tensor:
        cfg = self.cfg
        if stacked.ndim != 4 or stacked.shape[1:] != (3 * cfg.n_frames, cfg.height, cfg.width):
            raise ShapeError(
                f"pose input must be (B, {3 * cfg.n_frames}, {cfg.height}, {cfg.width}), "
                f"got {stacked.shape}"
            )
        x = stacked
        for conv, bn in self.blocks:
            x = conv(x)
            if bn is not None:
                x = bn(x)
            x = x.leaky_relu(LEAKY_SLOPE)
        x = self.group_bn(self.group_conv(x)).leaky_relu(LEAKY_SLOPE)
        feats = x.mean(axis=(2, 3))  # (B, N*F)
        b = feats.shape[0]
        seq = feats.reshape((b, cfg.n_frames, cfg.pose_features))
        h1 = Tensor(np.zeros((b, cfg.lstm_hidden)))
        c1 = Tensor(np.zeros((b, cfg.lstm_hidden)))
        h2 = Tensor(np.zeros((b, cfg.lstm_hidden)))
        c2 = Tensor(np.zeros((b, cfg.lstm_hidden)))
        for t in range(cfg.n_frames):
            h1, c1 = self.lstm1.step(seq[:, t, :], h1, c1)
            h2, c2 = self.lstm2.step(h1, h2, c2)
        return self.head(h2) * self.cfg.pose_scale  # (B, 6*(N-1))


@dataclass
class ModelSet:
    """The four networks, seeded jointly."""

    depth: DepthGenerator
    disc: Discriminator
    pose: PoseRegressor
    config: NetworkConfig

    def train(self):
        for m in (self.depth, self.disc, self.pose):
            m.train()
        return self

    def eval(self):
        for m in (self.depth, self.disc, self.pose):
            m.eval()
        return self

    def generator_parameters(self) -> dict:
        """Everything the joint (non-discriminator) step updates."""
        out = {"depth." + n: t for n, t in self.depth.named_parameters().items()}
        out.update({"pose." + n: t for n, t in self.pose.named_parameters().items()})
        return out

    def discriminator_parameters(self) -> dict:
        return {"disc." + n: t for n, t in self.disc.named_parameters().items()}

    def state(self) -> dict:
        out = {}
        for tag, m in (("depth", self.depth), ("disc", self.disc), ("pose", self.pose)):
            out.update({tag + "." + n: a for n, a in m.state().items()})
        return out

    def load_state(self, state: dict) -> None:
        tags = ("depth.", "disc.", "pose.")
        stray = sorted(n for n in state if not n.startswith(tags))
        if stray:
            raise ShapeError(f"state mismatch: unexpected {stray}")
        for tag, m in (("depth", self.depth), ("disc", self.disc), ("pose", self.pose)):
            sub = {n[len(tag) + 1 :]: a for n, a in state.items() if n.startswith(tag + ".")}
            m.load_state(sub)


def build_models(cfg: NetworkConfig, seed: int) -> ModelSet:
    children = np.random.SeedSequence(seed).spawn(3)
    rngs = [np.random.Generator(np.random.PCG64(c)) for c in children]
    return ModelSet(
        depth=DepthGenerator(rngs[0], cfg),
        disc=Discriminator(rngs[1], cfg),
        pose=PoseRegressor(rngs[2], cfg),
        config=cfg,
    )


def architecture_table(module: Module) -> list:
    """(name, shape, size) rows for every parameter, sorted by name."""
    return [
        (name, tuple(t.data.shape), int(t.size))
        for name, t in sorted(module.named_parameters().items())
    ]

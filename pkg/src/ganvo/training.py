"""Adversarial training loop: photometric + GAN objectives with balance β.

Per step: reconstruct the target from every source view through the
depth and pose networks, update the discriminator once on (real target,
detached reconstruction), then update encoder/generator/pose jointly on
L_final = L_g + beta * L_d, where L_g is the photometric term and L_d
the generator-side adversarial term.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data.batching import Prefetcher, epoch_batches
from .engine import Adam, Tensor
from .errors import ConfigError, DataError, NoValidOverlapError, NumericError
from .models import ModelSet, NetworkConfig, build_models, full_config, toy_config
from .warp import composite_with_mask, inverse_warp, photometric_loss

PROB_EPS = 1e-7
CSV_HEADER = "step,L_g,L_d,d_loss,L_final,mask_fill"


@dataclass(frozen=True)
class TrainConfig:
    width: int = 48
    height: int = 16
    n_frames: int = 3
    batch_size: int = 4
    steps: int = 500
    lr: float = 1e-4  # desk-scale default; the full-scale rate 0.1 ships in configs/full.cfg
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    beta: object = "auto"  # balance factor, positive float or "auto"
    beta_window: int = 100
    seed: int = 0
    float_width: int = 64
    z_min: float = 1e-3
    composite_fill: bool = True  # fill invalid warp pixels from the real target before D
    network: str = "toy"
    checkpoint_every: int = 250
    prefetch: bool = False

    def __post_init__(self):
        if self.n_frames < 2:
            raise ConfigError(f"n_frames must be >= 2, got {self.n_frames}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.beta != "auto":
            if not isinstance(self.beta, (int, float)) or float(self.beta) <= 0:
                raise ConfigError(f"beta must be positive or 'auto', got {self.beta!r}")
        if self.beta_window < 1:
            raise ConfigError(f"beta_window must be >= 1, got {self.beta_window}")
        if self.float_width not in (32, 64):
            raise ConfigError(f"float_width must be 32 or 64, got {self.float_width}")
        if self.network not in ("toy", "full"):
            raise ConfigError(f"network must be 'toy' or 'full', got {self.network!r}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")

    def network_config(self) -> NetworkConfig:
        make = toy_config if self.network == "toy" else full_config
        return make(width=self.width, height=self.height, n_frames=self.n_frames)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Parse a plain key=value file; '#' starts a comment."""
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw, fields[key].type, path, lineno)
        return cls(**values)


def _parse_value(key, raw, ftype, path, lineno):
    if key == "beta":
        if raw == "auto":
            return "auto"
        ftype = "float"
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc


@dataclass(frozen=True)
class LossReport:
    step: int
    L_g: float  # photometric reconstruction term
    L_d: float  # generator-side adversarial term
    d_loss: float  # discriminator objective
    L_final: float  # L_g + beta * L_d
    mask_fill: float  # mean valid-mask coverage of the warps

    def __post_init__(self):
        vals = (self.L_g, self.L_d, self.d_loss, self.L_final, self.mask_fill)
        if not all(np.isfinite(v) for v in vals):
            raise NumericError(f"non-finite loss at step {self.step}: {vals}")
        if self.L_g < 0:
            raise NumericError(f"photometric loss must be >= 0, got {self.L_g}")

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.L_g:.17g},{self.L_d:.17g},"
            f"{self.d_loss:.17g},{self.L_final:.17g},{self.mask_fill:.17g}"
        )


def _clamped(p: Tensor) -> Tensor:
    return p.clamp(PROB_EPS, 1.0 - PROB_EPS)


def discriminator_loss(disc, real, fake) -> Tensor:
    """-[mean log D(real) + mean log(1 - D(fake))]; fake is detached."""
    real_t = real if isinstance(real, Tensor) else Tensor(np.asarray(real, dtype=float))
    d_real = _clamped(disc(real_t))
    d_fake = _clamped(disc(fake.detach() if isinstance(fake, Tensor) else Tensor(fake)))
    one = Tensor(np.ones(d_fake.shape))
    return -(d_real.log().mean() + (one - d_fake).log().mean())


def adversarial_loss(disc, fake: Tensor) -> Tensor:
    """Non-saturating generator term -mean log D(fake)."""
    return -_clamped(disc(fake)).log().mean()


def gan_losses(disc, real, fake):
    """(discriminator loss, generator-side adversarial loss) for one pair."""
    return discriminator_loss(disc, real, fake), adversarial_loss(disc, fake)


def total_loss(l_g, l_d, beta):
    if not isinstance(beta, (int, float)) or beta <= 0:
        raise ConfigError(f"beta must be a positive number, got {beta!r}")
    return l_g + l_d * float(beta)


def estimate_beta(l_g_history, l_d_history, window: int = 100) -> float:
    """Ratio of windowed means: beta = mean(L_g) / mean(L_d)."""
    lg = np.asarray(l_g_history, dtype=float)
    ld = np.asarray(l_d_history, dtype=float)
    if lg.shape != ld.shape or lg.ndim != 1:
        raise ConfigError("loss histories must be equal-length 1-D sequences")
    if lg.size < window:
        raise ConfigError(f"need at least {window} recorded steps, have {lg.size}")
    mean_d = float(ld[-window:].mean())
    if mean_d < 1e-9:
        raise NumericError("discriminator collapsed: windowed mean L_d below 1e-9")
    return float(lg[-window:].mean()) / mean_d


def collate(batch) -> dict:
    """Stack a list of SampleSequence into step-ready arrays."""
    if not batch:
        raise DataError("empty batch")
    first = batch[0]
    n = first.n_frames
    K = first.intrinsics
    for s in batch:
        if s.n_frames != n:
            raise DataError("mixed window lengths in one batch")
        if s.intrinsics != K:
            raise DataError("mixed camera intrinsics in one batch")
    targets = np.stack([s.target for s in batch])  # (B, 3, H, W)
    sources = [
        np.stack([s.sources()[i] for s in batch]) for i in range(n - 1)
    ]  # time order, target excluded
    stacked = np.concatenate([np.stack([s.frames[k] for s in batch]) for k in range(n)], axis=1)
    return {"targets": targets, "sources": sources, "stacked": stacked, "intrinsics": K}


def reconstruct_batch(models: ModelSet, collated: dict, z_min: float, composite: bool):
    """Depth + pose forward, then one warp per (sample, source view).

    Returns (photometric loss Tensor, composited fakes Tensor
    ((N-1)*B, 3, H, W) in source-major order, mean mask coverage).
    """
    targets = collated["targets"]
    sources = collated["sources"]
    K = collated["intrinsics"]
    b = targets.shape[0]
    depth_t, _, _ = models.depth(Tensor(targets))
    pose_out = models.pose(Tensor(collated["stacked"]))

    terms, fakes, coverages = [], [], []
    for i, source_batch in enumerate(sources):
        for k in range(b):
            pose_vec = pose_out[k, 6 * i : 6 * (i + 1)]
            warp = inverse_warp(source_batch[k], depth_t[k, 0], pose_vec, K, z_min=z_min)
            terms.append(photometric_loss(warp.image, targets[k], warp.mask))
            coverages.append(warp.coverage)
            fake = composite_with_mask(warp.image, targets[k], warp.mask) if composite else warp.image
            fakes.append(fake)
    l_g = Tensor.stack(terms).mean()
    return l_g, Tensor.stack(fakes), float(np.mean(coverages))


def train_step(models: ModelSet, batch, config: TrainConfig, g_opt: Adam, d_opt: Adam,
               beta: float, step: int) -> LossReport:
    """One discriminator update, then one joint E/G/P update on L_final."""
    collated = collate(batch)
    if collated["targets"].shape[2:] != (config.height, config.width):
        raise DataError(
            f"batch images are {collated['targets'].shape[2:]}, "
            f"config expects {(config.height, config.width)}"
        )
    models.train()
    try:
        l_g, fakes, fill = reconstruct_batch(
            models, collated, z_min=config.z_min, composite=config.composite_fill
        )
    except NoValidOverlapError as exc:
        raise NumericError(f"step {step}: {exc}") from exc

    n_src = len(collated["sources"])
    real_rep = np.concatenate([collated["targets"]] * n_src)

    d_loss = discriminator_loss(models.disc, real_rep, fakes)
    d_loss.backward()
    d_opt.step()
    d_opt.zero_grad()

    # fresh forward through the updated discriminator
    l_d = adversarial_loss(models.disc, fakes)
    l_final = total_loss(l_g, l_d, beta)
    l_final.backward()
    g_opt.step()
    g_opt.zero_grad()
    d_opt.zero_grad()  # discard adversarial gradients that reached D

    return LossReport(
        step=step,
        L_g=float(l_g.data),
        L_d=float(l_d.data),
        d_loss=float(d_loss.data),
        L_final=float(l_final.data),
        mask_fill=fill,
    )


@dataclass
class Trainer:
    """Step loop with CSV logging, checkpoints, and auto-β estimation."""

    config: TrainConfig
    samples: list
    out_dir: Path
    models: ModelSet = None
    reports: list = field(default_factory=list)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        if self.models is None:
            self.models = build_models(self.config.network_config(), self.config.seed)
        cfg = self.config
        self.g_opt = Adam(self.models.generator_parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
        self.d_opt = Adam(self.models.discriminator_parameters(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2)
        self.beta = 1.0 if cfg.beta == "auto" else float(cfg.beta)
        self.csv_path = self.out_dir / "losses.csv"
        self.csv_path.write_text(CSV_HEADER + "\n")
        if len(self.samples) < cfg.batch_size:
            raise DataError(
                f"{len(self.samples)} samples cannot fill a batch of {cfg.batch_size}"
            )

    def _batches(self):
        epoch = 0
        while True:
            batches = epoch_batches(
                self.samples, self.config.batch_size, seed=self.config.seed, epoch=epoch
            )
            if self.config.prefetch:
                batches = Prefetcher(batches, capacity=2 * self.config.batch_size)
            yield from batches
            epoch += 1

    def run(self, steps: int | None = None) -> list:
        cfg = self.config
        total = cfg.steps if steps is None else steps
        batches = self._batches()
        lg_hist, ld_hist = [], []
        with self.csv_path.open("a") as csv:
            for step in range(1, total + 1):
                report = train_step(
                    self.models, next(batches), cfg, self.g_opt, self.d_opt, self.beta, step
                )
                self.reports.append(report)
                csv.write(report.csv_row() + "\n")
                lg_hist.append(report.L_g)
                ld_hist.append(report.L_d)
                if cfg.beta == "auto":
                    # Bootstrap from the first observed ratio, then refresh on
                    # the window schedule; a fixed placeholder would let the
                    # adversarial term swamp the photometric one early on.
                    refresh = step % cfg.beta_window == 0 and len(lg_hist) >= cfg.beta_window
                    if step == 1 or refresh:
                        window = cfg.beta_window if refresh else 1
                        self.beta = estimate_beta(lg_hist, ld_hist, window)
                if step % cfg.checkpoint_every == 0 or step == total:
                    self.save_checkpoint(self.out_dir / f"checkpoint_{step:06d}.bin", step)
        return self.reports

    def save_checkpoint(self, path, step: int) -> None:
        arrays = self.models.state()
        adam_steps = {}
        for tag, opt in (("g_opt", self.g_opt), ("d_opt", self.d_opt)):
            for name, state in opt.states.items():
                arrays[f"{tag}.{name}.m"] = state.m
                arrays[f"{tag}.{name}.v"] = state.v
                adam_steps[f"{tag}.{name}"] = state.step
        meta = {
            "step": step,
            "beta": self.beta,
            "adam_steps": adam_steps,
            "config": self.config.as_dict(),
        }
        save_checkpoint(path, arrays, meta)

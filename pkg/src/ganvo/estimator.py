"""Estimator-style facade over the training loop and trained networks.

Mirrors the scikit-learn parameter protocol: constructor stores
hyperparameters verbatim, ``get_params``/``set_params`` round-trip them,
``fit`` validates and trains, and fitted state lives in trailing-underscore
attributes.  Inputs are window samples (see ``ganvo.data``); predictions
are dense depth maps and 6-DoF relative pose vectors.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np

from .engine import Tensor, no_grad
from .errors import ConfigError, ShapeError
from .training import TrainConfig, Trainer, collate

_PARAM_NAMES = (
    "width", "height", "n_frames", "batch_size", "steps", "lr",
    "beta", "beta_window", "seed", "network", "out_dir",
)


class GanvoEstimator:
    """Unsupervised depth-and-egomotion estimator trained by view synthesis."""

    def __init__(
        self,
        width: int = 48,
        height: int = 16,
        n_frames: int = 3,
        batch_size: int = 4,
        steps: int = 500,
        lr: float = 1e-4,
        beta="auto",
        beta_window: int = 100,
        seed: int = 0,
        network: str = "toy",
        out_dir=None,
    ):
        self.width = width
        self.height = height
        self.n_frames = n_frames
        self.batch_size = batch_size
        self.steps = steps
        self.lr = lr
        self.beta = beta
        self.beta_window = beta_window
        self.seed = seed
        self.network = network
        self.out_dir = out_dir

    # -- parameter protocol -------------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def set_params(self, **params) -> "GanvoEstimator":
        for name, value in params.items():
            if name not in _PARAM_NAMES:
                raise ConfigError(f"unknown parameter {name!r} for GanvoEstimator")
            setattr(self, name, value)
        return self

    # -- fitting ------------------------------------------------------------

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            width=self.width,
            height=self.height,
            n_frames=self.n_frames,
            batch_size=self.batch_size,
            steps=self.steps,
            lr=self.lr,
            beta=self.beta,
            beta_window=self.beta_window,
            seed=self.seed,
            network=self.network,
        )

    def fit(self, X, y=None) -> "GanvoEstimator":
        """Train on a list of window samples; `y` is ignored (unsupervised)."""
        config = self._train_config()  # validates hyperparameters
        if self.out_dir is None:
            self._tmp_dir = tempfile.TemporaryDirectory(prefix="ganvo-fit-")
            out_dir = Path(self._tmp_dir.name)
        else:
            out_dir = Path(self.out_dir)
        trainer = Trainer(config, list(X), out_dir=out_dir)
        trainer.run()
        self.trainer_ = trainer
        self.models_ = trainer.models
        self.reports_ = trainer.reports
        self.models_.eval()
        return self

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise ConfigError("estimator is not fitted; call fit() first")

    # -- prediction ---------------------------------------------------------

    def _check_images(self, X, channels: int) -> np.ndarray:
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 3:
            arr = arr[None]
        expect = (channels, self.height, self.width)
        if arr.ndim != 4 or arr.shape[1:] != expect:
            raise ShapeError(f"expected images shaped (B,) + {expect}, got {arr.shape}")
        return arr

    def predict_depth(self, X) -> np.ndarray:
        """(B, 3, H, W) images -> (B, H, W) depth maps."""
        self._check_fitted()
        arr = self._check_images(X, 3)
        with no_grad():
            depth, _, _ = self.models_.depth(Tensor(arr))
        return depth.data[:, 0].copy()

    def predict_pose(self, X) -> np.ndarray:
        """Window samples or (B, 3N, H, W) stacks -> (B, 6*(N-1)) pose vectors."""
        self._check_fitted()
        if isinstance(X, np.ndarray) and X.ndim in (3, 4):
            arr = self._check_images(X, 3 * self.n_frames)
        else:
            arr = collate(list(X))["stacked"]
        with no_grad():
            out = self.models_.pose(Tensor(arr))
        return out.data.copy()

    def score(self, X) -> float:
        """Negative mean photometric loss over `X` (higher is better)."""
        from .training import reconstruct_batch

        self._check_fitted()
        config = self._train_config()
        batch = collate(list(X))
        with no_grad():
            l_g, _, _ = reconstruct_batch(
                self.models_, batch, z_min=config.z_min, composite=config.composite_fill
            )
        return -l_g.item()

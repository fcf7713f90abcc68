"""Unsupervised monocular visual odometry and depth with adversarial training.

Subpackages are imported lazily so that lightweight uses (``ganvo.errors``,
the CLI parser) do not pay for numpy-heavy modules, and so the CLI can pin
thread counts before numerics load.
"""

from __future__ import annotations

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "engine",
    "errors",
    "geometry",
    "warp",
    "models",
    "training",
    "data",
    "evaluation",
    "export",
    "estimator",
    "checksuite",
    "checkpoint",
    "cli",
)

__all__ = list(_SUBMODULES) + ["__version__"]


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(__all__)

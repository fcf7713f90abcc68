from .types import DatasetManifest, SampleSequence
from .synthetic import (
    SceneConfig,
    SyntheticDataset,
    SyntheticScene,
    generate_synthetic_scene,
    toy_dataset,
)

__all__ = [
    "DatasetManifest",
    "SampleSequence",
    "SceneConfig",
    "SyntheticDataset",
    "SyntheticScene",
    "generate_synthetic_scene",
    "toy_dataset",
]

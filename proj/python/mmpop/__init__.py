"""Retrieval-augmented multi-modal popularity prediction."""

from ._mmpop import (
    DataError,
    Ensemble,
    Manifest,
    UsageError,
    VideoRecord,
    default_config,
    filter_playable,
    generate_synthetic,
    load_manifest,
    mse,
    plcc,
    run_cli,
    save_manifest,
    split,
    summarize,
    train,
)

__all__ = [
    "DataError",
    "Ensemble",
    "Manifest",
    "UsageError",
    "VideoRecord",
    "default_config",
    "filter_playable",
    "generate_synthetic",
    "load_manifest",
    "mse",
    "plcc",
    "run_cli",
    "save_manifest",
    "split",
    "summarize",
    "train",
]

__version__ = "0.1.0"

"""Trainable video summarization from pre-extracted frame features: spiking
keyframe extraction, similarity-filtered graph reasoning over three temporal
graphs, closed-form variational fusion of the channel scores, optional query
conditioning, and KTS + knapsack summary assembly."""

from .config import PipelineConfig
from .errors import (ConfigError, PipelineError, ShapeError, SpivgError,
                     StoreError, TrainingDiverged)
from .model import SpivgModel
from .store import FeatureStore, load_features, make_synthetic, save_store

__all__ = [
    "PipelineConfig", "SpivgModel", "FeatureStore",
    "load_features", "make_synthetic", "save_store",
    "SpivgError", "ShapeError", "ConfigError", "StoreError",
    "PipelineError", "TrainingDiverged",
]

__version__ = "0.1.0"

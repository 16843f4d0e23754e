"""Permutation-invariant set encoder-decoder for laboratory outcome prediction.

The package bundles a small reverse-mode autodiff engine, the feature catalog
and data pipeline, the set model and fixed-width MLP baselines, training,
metrics, a synthetic data generator, and a command-line interface.
"""
from .catalog import CATALOG, FeatureCatalog
from .dataset import AdRange, Batch, LabRecord
from .model import MlpModel, UlmConfig, UlmModel

__version__ = "0.1.0"

__all__ = ["CATALOG", "FeatureCatalog", "AdRange", "Batch", "LabRecord",
           "MlpModel", "UlmConfig", "UlmModel", "__version__"]

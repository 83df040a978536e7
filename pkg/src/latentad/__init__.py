"""Generative latent-variable anomaly detection for multivariate time series.

Trains a top-down convolutional generator over a hierarchical latent space
by alternating back-propagation with short-run Langevin posterior sampling,
then scores a test stream by MAP reconstruction error.
"""

from .config import RunConfig
from .data import SeriesFrame
from .errors import (ConfigError, DataError, LatentADError, NumericError,
                     ShapeError, ValidationError)
from .generator import GeneratorArch, GeneratorParams, build_generator
from .hierarchy import HierarchySpec, latent_layout
from .langevin import LangevinConfig, langevin_infer

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "GeneratorArch",
    "GeneratorParams",
    "HierarchySpec",
    "LangevinConfig",
    "LatentADError",
    "NumericError",
    "RunConfig",
    "SeriesFrame",
    "ShapeError",
    "ValidationError",
    "build_generator",
    "langevin_infer",
    "latent_layout",
    "__version__",
]

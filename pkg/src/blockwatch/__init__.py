"""Block-wise process monitoring.

Per-block LSTM autoencoders with an orthogonality penalty produce latent
codes; Hotelling's T² and a quantile-based multivariate CUSUM score them; a
weighted Bayesian fusion combines metrics into block statistics and blocks
into one plant-wide fault index.
"""

from .core import (BlockPartition, Standardizer, StreamMatrix, TEP_PARTITION,
                   TEP_VARIABLES, WindowedDataset, apply_standardizer,
                   chronological_split, fit_standardizer, make_windows, partition)
from .errors import (BlockwatchError, ConfigError, DataError, NumericError,
                     SchemaError, StateError, TrainingError)
from .fusion import FusionConfig, MetricReading, fuse_block, fuse_plant, wbf
from .olae import OlaeModel, TrainConfig, encode, init_model, train
from .pipeline import (BlockArtifacts, EvalReport, PipelineConfig, PlantArtifacts,
                       evaluate, monitor, offline_learn)
from .simgen import FaultSpec, ProcessSpec, default_spec, generate, inject_fault
from .stats import CusumConfig, QuantileGrid, T2Model, calibrate_threshold

__version__ = "0.1.0"

__all__ = [
    "BlockArtifacts",
    "BlockPartition",
    "BlockwatchError",
    "ConfigError",
    "CusumConfig",
    "DataError",
    "EvalReport",
    "FaultSpec",
    "FusionConfig",
    "MetricReading",
    "NumericError",
    "OlaeModel",
    "PipelineConfig",
    "PlantArtifacts",
    "ProcessSpec",
    "QuantileGrid",
    "SchemaError",
    "Standardizer",
    "StateError",
    "StreamMatrix",
    "T2Model",
    "TEP_PARTITION",
    "TEP_VARIABLES",
    "TrainConfig",
    "TrainingError",
    "WindowedDataset",
    "apply_standardizer",
    "calibrate_threshold",
    "chronological_split",
    "default_spec",
    "encode",
    "evaluate",
    "fit_standardizer",
    "fuse_block",
    "fuse_plant",
    "generate",
    "init_model",
    "inject_fault",
    "make_windows",
    "monitor",
    "offline_learn",
    "partition",
    "train",
    "wbf",
]

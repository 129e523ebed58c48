"""Streaming quantile estimation and distribution-aware numeric embeddings."""

from .model import CTRModel, ModelConfig, Schema, train_stream
from .modulation import ModulationParams
from .quantile_codec import QuantileTable, build_table, encode, encode_many
from .reservoir import OrderStatsEstimator, Reservoir
from .streamlab import StreamSpec, generate

__version__ = "0.1.0"

__all__ = [
    "CTRModel",
    "ModelConfig",
    "ModulationParams",
    "OrderStatsEstimator",
    "QuantileTable",
    "Reservoir",
    "Schema",
    "StreamSpec",
    "__version__",
    "build_table",
    "encode",
    "encode_many",
    "generate",
    "train_stream",
]

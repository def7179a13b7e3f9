"""Deformable matched-filter receiver for CAP modulation over a simulated bandlimited link."""

from ._kernels import BACKEND
from .channel import ChannelConfig, PowerMap, SimulatedChannel
from .dsp import CapFilterPair, RealSignal, SystemParams
from .features import FeatureStandardizer, FeatureVector, extract_features
from .neural import AdamState, Checkpoint, MlpParams, TrainConfig, hidden_dim, parameter_count
from .receiver import EvmReport, evm_percent, qam_demap, qam_map

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "AdamState",
    "CapFilterPair",
    "ChannelConfig",
    "Checkpoint",
    "EvmReport",
    "FeatureStandardizer",
    "FeatureVector",
    "MlpParams",
    "PowerMap",
    "RealSignal",
    "SimulatedChannel",
    "SystemParams",
    "TrainConfig",
    "evm_percent",
    "extract_features",
    "hidden_dim",
    "parameter_count",
    "qam_demap",
    "qam_map",
]

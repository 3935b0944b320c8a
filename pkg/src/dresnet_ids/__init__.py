"""Intrusion detection with a dense-residual Conv-GRU classifier.

Subsystems: a float64 reverse-mode autodiff core (:mod:`.tensor`), layers and
the network graph (:mod:`.layers`, :mod:`.model`), the tabular data pipeline
(:mod:`.pipeline`), training and metrics (:mod:`.train`, :mod:`.metrics`) and
cross-layer alert correlation (:mod:`.correlation`).
"""
from .kernels import BACKEND
from .model import ModelConfig, Network, build_network
from .tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["BACKEND", "ModelConfig", "Network", "Tape", "Tensor", "backward", "build_network", "__version__"]

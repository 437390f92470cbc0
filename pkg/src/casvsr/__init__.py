"""casvsr: content-aware scanning state-space video super-resolution.

A desk-scale, fully testable implementation: spectral scan-order
construction, cross-frame sequentialization, global-local state-space
refinement blocks, bidirectional propagation, and a minimal autodiff engine
to train it all against a Charbonnier objective.
"""
from .config import ModelConfig, config_from_text, config_to_text, load_config, save_config
from .model import (
    AdamState,
    ModelWeights,
    count_params,
    forward,
    init_weights,
    load_weights,
    save_weights,
    train_step,
)
from .ops import CharbonnierConfig, charbonnier_loss, charbonnier_loss_mean
from .propagation import FlowSet, PropagationConfig, propagate
from .scan import SSMParams, backend_name, selective_scan_chunked, selective_scan_seq
from .tensor import NonFiniteError, Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "CharbonnierConfig",
    "FlowSet",
    "ModelConfig",
    "ModelWeights",
    "NonFiniteError",
    "PropagationConfig",
    "SSMParams",
    "Tensor",
    "backend_name",
    "charbonnier_loss",
    "charbonnier_loss_mean",
    "config_from_text",
    "config_to_text",
    "count_params",
    "forward",
    "init_weights",
    "load_config",
    "load_weights",
    "no_grad",
    "propagate",
    "save_config",
    "save_weights",
    "selective_scan_chunked",
    "selective_scan_seq",
    "train_step",
    "__version__",
]

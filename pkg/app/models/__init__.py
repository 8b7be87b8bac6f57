"""Tensor types and validated configuration / report models"""
from .schemas import (
    ComplexitySpec,
    CostReport,
    EquivalenceReport,
    LayerKind,
    LossKind,
    PluginInit,
    SRModelConfig,
    TrainConfig,
    TrainingHistory,
    VerifyConfig,
    parse_config,
)
from .tensor import ComplexTensor, Precision, Tensor, broadcast_mul, reshape

__all__ = [
    "ComplexTensor",
    "ComplexitySpec",
    "CostReport",
    "EquivalenceReport",
    "LayerKind",
    "LossKind",
    "PluginInit",
    "Precision",
    "SRModelConfig",
    "Tensor",
    "TrainConfig",
    "TrainingHistory",
    "VerifyConfig",
    "broadcast_mul",
    "parse_config",
    "reshape",
]

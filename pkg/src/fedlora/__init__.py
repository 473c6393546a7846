"""Desk-scale simulator for federated low-rank adapter fine-tuning.

Implements split aggregation (A shared, B local) plus baseline strategies,
a family of adapter scaling rules including the client-and-rank aware
``alpha * sqrt(N / r)``, and the oracles (finite differences, exact
trajectories, Monte-Carlo moment identities) that verify the stability
theory behind it.
"""

from .adapter import (
    AdapterGradients,
    LoraAdapter,
    ScalingRule,
    adapter_backward,
    adapter_forward,
    init_adapter,
    merge_adapter,
    scaling_factor,
)
from .config import ExperimentConfig, parse_config, serialize_config
from .fed import run_experiment
from .linalg import ContractViolation, DenseMatrix, RngStream
from .metrics import (
    MetricsRecord,
    StabilityReport,
    avg_grad_norm,
    moment_identity_check,
    stability_sweep,
    trajectory_oracle,
)

__all__ = [
    "AdapterGradients",
    "ContractViolation",
    "DenseMatrix",
    "ExperimentConfig",
    "LoraAdapter",
    "MetricsRecord",
    "RngStream",
    "ScalingRule",
    "StabilityReport",
    "adapter_backward",
    "adapter_forward",
    "avg_grad_norm",
    "init_adapter",
    "merge_adapter",
    "moment_identity_check",
    "parse_config",
    "run_experiment",
    "scaling_factor",
    "serialize_config",
    "stability_sweep",
    "trajectory_oracle",
]

__version__ = "0.1.0"

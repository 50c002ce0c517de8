"""Out-domain adversarial attacks on uncertainty estimators."""

from ._core import (
    CheckpointError,
    ContractError,
    FormatError,
    Model,
    ValidationError,
    benchmark,
    default_config,
    entropy,
    load_model,
    normalize_config,
    project_linf,
    read_report,
    rejection_rate,
    run_experiment,
    sweep_epsilon,
    train_model,
)

__all__ = [
    "CheckpointError",
    "ContractError",
    "FormatError",
    "Model",
    "ValidationError",
    "benchmark",
    "default_config",
    "entropy",
    "load_model",
    "normalize_config",
    "project_linf",
    "read_report",
    "rejection_rate",
    "run_experiment",
    "sweep_epsilon",
    "train_model",
]

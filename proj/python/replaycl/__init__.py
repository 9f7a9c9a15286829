"""Replay-based class-incremental continual learning."""

from ._core import (  # noqa: F401
    ConfigError,
    ContractError,
    Dataset,
    ReplayClError,
    acc,
    bwt,
    ce_loss,
    ce_loss_soft,
    compare_experiments,
    diversity_select,
    kd_loss,
    lambda_schedule,
    load_manifest,
    make_synthetic,
    perturb_embedding,
    quota,
    run_experiment,
    save_manifest,
    softmax_t,
    uncertainty_from_probs,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Dataset",
    "ReplayClError",
    "acc",
    "bwt",
    "ce_loss",
    "ce_loss_soft",
    "compare_experiments",
    "diversity_select",
    "kd_loss",
    "lambda_schedule",
    "load_manifest",
    "make_synthetic",
    "perturb_embedding",
    "quota",
    "run_experiment",
    "save_manifest",
    "softmax_t",
    "uncertainty_from_probs",
]

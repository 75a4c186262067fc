"""Physically guided neural networks with internal variables.

A coupled pair of dense networks for the nonlinear 2-D diffusion problem:
a predictive network maps boundary measurements to the interior solution
field through a reduced latent space, while a shared per-node explanatory
network recovers the constitutive law K(u) from physics penalties alone.
Decoders are interchangeable (trainable dense, Fourier spectral, POD,
pretrained autoencoder) and trained setups can be transferred to new
materials with or without a frozen encoder.
"""

from .autodiff import AdamState, AutodiffError, Graph, adam_step, backward, forward
from .basis import (
    FrozenDecoder,
    PodBasis,
    SpectralBasis,
    compute_svd,
    fourier_basis,
    load_autoencoder,
    load_basis,
    pod_basis,
    pretrain_autoencoder,
    save_autoencoder,
    save_basis,
    spectral_decode,
)
from .data import (
    Coefficients,
    Dataset,
    SampleBundle,
    SplitIndices,
    batch_arrays,
    clean_fields,
    conductivity,
    generate_dataset,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .loss import LossBreakdown, LossWeights, pgnniv_loss
from .metrics import (
    RunReport,
    explanatory_error,
    load_report,
    mann_whitney_u,
    overfitting_points,
    predictive_error,
    quartiles,
    save_report,
    speedup_table,
    validation_errors,
)
from .model import (
    ExplanatorySpec,
    Model,
    PredictiveSpec,
    build_model,
    count_parameters,
    explain_K,
    load_checkpoint,
    parameter_formulas,
    predict_field,
    predict_fields,
    save_checkpoint,
)
from .train import (
    DESK_SCHEDULE,
    FULL_SCHEDULE,
    History,
    RunConfig,
    Schedule,
    TrainMode,
    TrainingError,
    load_config,
    run_experiment,
    seed_all,
    train,
)

__all__ = [
    "AdamState",
    "AutodiffError",
    "Coefficients",
    "Dataset",
    "DESK_SCHEDULE",
    "ExplanatorySpec",
    "FrozenDecoder",
    "FULL_SCHEDULE",
    "Graph",
    "History",
    "LossBreakdown",
    "LossWeights",
    "Model",
    "PodBasis",
    "PredictiveSpec",
    "RunConfig",
    "RunReport",
    "SampleBundle",
    "Schedule",
    "SpectralBasis",
    "SplitIndices",
    "TrainMode",
    "TrainingError",
    "adam_step",
    "backward",
    "batch_arrays",
    "build_model",
    "clean_fields",
    "compute_svd",
    "conductivity",
    "count_parameters",
    "explain_K",
    "explanatory_error",
    "forward",
    "fourier_basis",
    "generate_dataset",
    "load_autoencoder",
    "load_basis",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "load_report",
    "mann_whitney_u",
    "overfitting_points",
    "parameter_formulas",
    "pgnniv_loss",
    "pod_basis",
    "predict_field",
    "predict_fields",
    "predictive_error",
    "pretrain_autoencoder",
    "quartiles",
    "run_experiment",
    "save_autoencoder",
    "save_basis",
    "save_checkpoint",
    "save_dataset",
    "save_report",
    "seed_all",
    "spectral_decode",
    "speedup_table",
    "split_dataset",
    "train",
    "validation_errors",
]

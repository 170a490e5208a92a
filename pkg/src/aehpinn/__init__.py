"""Physics-informed network training with alternating easy/hard sample prioritization."""

__version__ = "0.1.0"

from .autodiff import JetValue, forward_jet, forward_value, linearize, parameter_gradient
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    MissingReferenceError,
    NumericFailureError,
    UnsupportedProblemError,
)
from .groups import AdaptiveWeights, GroupArrays
from .harness import (
    RunConfig,
    load_checkpoint,
    load_config,
    run_experiment,
    save_checkpoint,
    sweep,
    write_prediction_grid,
)
from .losses import CollocationBatch, aggregate_loss, per_sample_losses, relative_l2
from .network import NetworkConfig, OptimizerConfig, ParameterVector, init_parameters
from .problems import build_problem, exact_solution, pde_residual, sample_training_set, test_grid
from .strategies import StrategySpec, TrainerState, select_easy_subset, selection_ratio, train
from .estimator import PINNSolver

__all__ = [
    "AdaptiveWeights", "CheckpointError", "CollocationBatch", "ConfigurationError", "GroupArrays",
    "JetValue", "MissingReferenceError", "NetworkConfig", "NumericFailureError",
    "OptimizerConfig", "PINNSolver", "ParameterVector", "RunConfig", "StrategySpec",
    "TrainerState", "UnsupportedProblemError", "aggregate_loss", "build_problem",
    "exact_solution", "forward_jet", "forward_value", "init_parameters", "linearize",
    "load_checkpoint", "load_config", "parameter_gradient", "pde_residual", "per_sample_losses",
    "relative_l2", "run_experiment", "sample_training_set", "save_checkpoint",
    "select_easy_subset", "selection_ratio", "sweep", "test_grid", "train",
    "write_prediction_grid",
]

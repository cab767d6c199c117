"""Self-correcting classification.

Wraps any small classifier (encoder + label module) with a correction
module that estimates prediction correctness, then refines predictions at
inference time by repeatedly stepping the label logits along the gradient
of that estimate. Includes two-phase training, threshold tuning,
robustness experiments, and a CLI.
"""

from .data import Dataset, Split, SyntheticSpec, benchmark_spec, generate_synthetic
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DivergenceError,
    FormatError,
    LifecycleError,
    NumericsError,
    ThoughtflowError,
)
from .flow import (
    SQRT_LN2,
    FlowStep,
    FlowTrace,
    StoppingConfig,
    correctness_gradient,
    flow_prediction,
    flow_step,
    js_distance,
    run_flow,
)
from .model import CorrectionModule, Encoder, LabelModule, ModelBundle, build_bundle
from .training import (
    TrainConfig,
    accuracy,
    auc_score,
    make_correctness_labels,
    train_base,
    train_correction,
)
from .tuning import TunerGrid, evaluate_grid, select_thresholds

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Split",
    "SyntheticSpec",
    "benchmark_spec",
    "generate_synthetic",
    "ThoughtflowError",
    "DimensionError",
    "ConfigError",
    "ContractError",
    "LifecycleError",
    "DivergenceError",
    "NumericsError",
    "FormatError",
    "SQRT_LN2",
    "FlowStep",
    "FlowTrace",
    "StoppingConfig",
    "correctness_gradient",
    "flow_prediction",
    "flow_step",
    "js_distance",
    "run_flow",
    "Encoder",
    "LabelModule",
    "CorrectionModule",
    "ModelBundle",
    "build_bundle",
    "TrainConfig",
    "accuracy",
    "auc_score",
    "make_correctness_labels",
    "train_base",
    "train_correction",
    "TunerGrid",
    "evaluate_grid",
    "select_thresholds",
    "__version__",
]

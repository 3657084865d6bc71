from .data import (
    SynthSample,
    SynthSpec,
    SynthSpecError,
    as_arrays,
    export_split,
    generate,
    mutual_information,
    rng_for,
    without_sensitive,
)
from .experiment import (
    ExperimentConfig,
    ExperimentConfigError,
    ExperimentResult,
    evaluate,
    make_model,
    run_experiment,
    train,
)
from .model import MODES, AttENClassifier, TrainingDivergedError, mode_flags

__all__ = [
    "SynthSpec",
    "SynthSample",
    "SynthSpecError",
    "generate",
    "as_arrays",
    "export_split",
    "mutual_information",
    "rng_for",
    "without_sensitive",
    "AttENClassifier",
    "TrainingDivergedError",
    "MODES",
    "mode_flags",
    "ExperimentConfig",
    "ExperimentConfigError",
    "ExperimentResult",
    "make_model",
    "train",
    "evaluate",
    "run_experiment",
]

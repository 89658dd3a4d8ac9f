"""Grounded spatial-instruction understanding for block worlds.

Given a natural-language instruction and unlabeled 3D block positions, the
models here predict which block to move (classification over blocks) and
where to move it (a reference-block distribution plus a Gaussian offset),
trainable by supervised expectation regression or annealed policy-gradient
sampling.
"""

from .autodiff import Tape, Tensor, apply, grad_check, parameter, tensor
from .config import TrainConfig
from .data import (
    Dataset,
    InstructionRecord,
    generate_synthetic,
    load_dataset,
    save_dataset,
)
from .encoders import Vocabulary, tokenize
from .evaluation import EvalReport, evaluate
from .model import ModelOutputs, forward, init_params
from .target import (
    AnnealSchedule,
    LinearBaseline,
    TargetPrediction,
    anneal_next,
    intermediate_loss,
    predict_expectation,
    predict_sample,
    sampling_gradient,
)
from .training import (
    Checkpoint,
    ensemble_predict,
    example_sampling_gradient,
    joint_loss,
    load_checkpoint,
    save_checkpoint,
    train,
    train_ensemble,
)
from .world import BlockFeatures, WorldState, add_noise, detect_stack, featurize

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "BlockFeatures",
    "Checkpoint",
    "Dataset",
    "EvalReport",
    "InstructionRecord",
    "LinearBaseline",
    "ModelOutputs",
    "Tape",
    "TargetPrediction",
    "Tensor",
    "TrainConfig",
    "Vocabulary",
    "WorldState",
    "add_noise",
    "anneal_next",
    "apply",
    "detect_stack",
    "ensemble_predict",
    "evaluate",
    "example_sampling_gradient",
    "featurize",
    "forward",
    "generate_synthetic",
    "grad_check",
    "init_params",
    "intermediate_loss",
    "joint_loss",
    "load_checkpoint",
    "load_dataset",
    "parameter",
    "predict_expectation",
    "predict_sample",
    "sampling_gradient",
    "save_checkpoint",
    "save_dataset",
    "tensor",
    "tokenize",
    "train",
    "train_ensemble",
]

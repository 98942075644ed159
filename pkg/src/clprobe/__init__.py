"""Continual linear probing over frozen features with task-aware experience replay."""

__version__ = "0.1.0"

from .classifier import (
    Classifier,
    GradientSlice,
    OptimizerConfig,
    expand_classifier,
    logits,
    loss_and_grad_masked,
    predict,
    sgd_step,
    softmax,
)
from .data import (
    LabeledFeature,
    LabeledFeatureSet,
    SyntheticConfig,
    TaskStream,
    generate_synthetic_stream,
    load_feature_dataset,
    sample_batch,
    save_feature_dataset,
    split_into_tasks,
)
from .memory import EpisodicMemory, sample_replay_batch, update_memory
from .metrics import (
    average_accuracy,
    average_incremental_accuracy,
    confusion_matrix,
    old_task_probability_mass,
    preserved_accuracy,
    task_accuracy,
)
from .strategies import StrategyConfig, compute_lambda, phase_loss, run_sequence, train_task

"""CRNN recognizer: configuration, network, training and checkpoints."""
from .checkpoint import CheckpointError, load, save
from .config import DESK, PAPER, ConfigError, FreezeSpec, ModelConfig, TrainSchedule
from .network import InputError, ModelState, build, closed_form_param_count, decode, forward
from .training import TrainingError, corpus_cer, evaluate_model, fine_tune, train, transfer_init

__all__ = [
    "CheckpointError", "ConfigError", "DESK", "FreezeSpec", "InputError", "ModelConfig", "ModelState",
    "PAPER", "TrainSchedule", "TrainingError", "build", "closed_form_param_count", "corpus_cer", "decode",
    "evaluate_model", "fine_tune", "forward", "load", "save", "train", "transfer_init",
]

from .checkpoint import Checkpoint, checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from .data import featurizer_for, prepare_sample, prepare_samples
from .generate import GenerationResult, generate
from .model import AssemblyError, LengthError, PlannerConfig, PlannerModel, Sample, TokenStream, token_nll
from .train import TrainingError, train, warmup_cosine_scale
from .vocab import Vocab, build_vocab

__all__ = [
    "AssemblyError",
    "Checkpoint",
    "GenerationResult",
    "LengthError",
    "PlannerConfig",
    "PlannerModel",
    "Sample",
    "TokenStream",
    "TrainingError",
    "Vocab",
    "build_vocab",
    "checkpoint_from_model",
    "featurizer_for",
    "generate",
    "load_checkpoint",
    "model_from_checkpoint",
    "prepare_sample",
    "prepare_samples",
    "save_checkpoint",
    "token_nll",
    "train",
    "warmup_cosine_scale",
]

"""Sequential recommendation with per-position spectral filters on a
directed cyclic graph."""

__version__ = "0.1.0"

from .data import Corpus, DataError, LoadReport, Split, load_corpus, split_loo
from .evaluation import EvalReport, evaluate, metrics_from_rank, rank_of_target
from .model import ModelConfig, init_params, load_checkpoint, predict_scores, save_checkpoint
from .train import TrainConfig, TrainLog, fit, loss_and_grads, make_synthetic

__all__ = [
    "__version__",
    "Corpus",
    "DataError",
    "LoadReport",
    "Split",
    "load_corpus",
    "split_loo",
    "EvalReport",
    "evaluate",
    "metrics_from_rank",
    "rank_of_target",
    "ModelConfig",
    "init_params",
    "load_checkpoint",
    "predict_scores",
    "save_checkpoint",
    "TrainConfig",
    "TrainLog",
    "fit",
    "loss_and_grads",
    "make_synthetic",
]

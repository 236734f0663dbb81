"""Deterministic end-to-end multimodal driving model on numpy."""

from .config import ModelConfig, TrainConfig, tiny_config
from .estimator import DrivingPolicy
from .evaluation import EvalReport, EpisodeScore, evaluate_dataset, score_episode
from .io import load_checkpoint, read_dataset, save_checkpoint, write_dataset
from .model import DrivingModel
from .render import render_plot
from .scenario import Episode, make_dataset, make_episode
from .tokenizer import ByteTokenizer
from .training import train_loop

__all__ = [
    "ByteTokenizer",
    "DrivingModel",
    "DrivingPolicy",
    "Episode",
    "EpisodeScore",
    "EvalReport",
    "ModelConfig",
    "TrainConfig",
    "evaluate_dataset",
    "load_checkpoint",
    "make_dataset",
    "make_episode",
    "read_dataset",
    "render_plot",
    "save_checkpoint",
    "score_episode",
    "tiny_config",
    "train_loop",
    "write_dataset",
]
__version__ = "0.1.0"

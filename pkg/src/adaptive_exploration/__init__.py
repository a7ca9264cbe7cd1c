"""Adaptive exploration: memory-bank instance discrimination with adaptive neighbor selection."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .data_io import FeatureTable, SynthConfig, generate, read_table, split, write_table
from .evaluation import MetricsReport, evaluate
from .memory import FeatureMemory
from .model import EmbeddingModel, load_model, save_model
from .selection import SelectionConfig, SelectionSet, select
from .trainer import TrainConfig, train

__all__ = [
    "BACKEND", "EmbeddingModel", "FeatureMemory", "FeatureTable", "MetricsReport",
    "SelectionConfig", "SelectionSet", "SynthConfig", "TrainConfig", "evaluate", "generate",
    "load_model", "read_table", "save_model", "select", "split", "train", "write_table",
]

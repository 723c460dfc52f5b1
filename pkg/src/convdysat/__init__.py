"""ConvDySAT: dynamic graph embeddings from structural attention and convolutional temporal attention."""

from .graph import DynamicGraph, Snapshot, build_snapshots, graph_from_edges, read_edge_list
from .model import ModelConfig, ParameterSet, context_loss, forward, init_params
from .sampling import WalkConfig
from .training import TrainConfig, Trainer, load_checkpoint, save_checkpoint, train
from .evaluation import EvalReport, evaluate, roc_auc

__version__ = "0.1.0"

__all__ = [
    "DynamicGraph", "Snapshot", "build_snapshots", "graph_from_edges", "read_edge_list",
    "ModelConfig", "ParameterSet", "context_loss", "forward", "init_params",
    "WalkConfig", "TrainConfig", "Trainer", "load_checkpoint", "save_checkpoint", "train",
    "EvalReport", "evaluate", "roc_auc",
]

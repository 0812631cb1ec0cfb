"""Graph-structured evidence integration for multi-hop reading comprehension.

Pipeline: :mod:`mhqa.data` instances -> :mod:`mhqa.graph` typed mention graphs
-> :mod:`mhqa.encoders` (BiLSTM / DAG-LSTM) -> :mod:`mhqa.graph_encoders`
(GRN / GCN) -> :mod:`mhqa.matcher` candidate distribution, trained by
:mod:`mhqa.training` on numpy through the tape in :mod:`mhqa.autodiff`.
"""

from .data import Dataset, Instance, MentionAnnotation, TokenSequence, parse_dataset, write_dataset
from .graph import EdgeType, EvidenceGraph, GraphConfig, build_graph, distance_histogram
from .model import ModelConfig, Reader
from .synth import GenConfig, generate
from .training import TrainConfig, evaluate, load_model, save_model, train

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Instance", "MentionAnnotation", "TokenSequence", "parse_dataset", "write_dataset",
    "EdgeType", "EvidenceGraph", "GraphConfig", "build_graph", "distance_histogram",
    "ModelConfig", "Reader", "GenConfig", "generate",
    "TrainConfig", "evaluate", "load_model", "save_model", "train",
]

"""Direction-sensitive multi-task GCN for knowledge-graph completion."""

from .config import Config, load_config
from .data import (
    AugmentedGraph,
    Vocabulary,
    build_neighbor_index,
    categorize_relations,
    load_dataset,
    uncertainty_counts,
)
from .model import DsMtGCN
from .train import compute_metrics, evaluate, filtered_rank, subtask_report, train

__version__ = "0.1.0"

__all__ = [
    "AugmentedGraph",
    "Config",
    "DsMtGCN",
    "Vocabulary",
    "build_neighbor_index",
    "categorize_relations",
    "compute_metrics",
    "evaluate",
    "filtered_rank",
    "load_config",
    "load_dataset",
    "subtask_report",
    "train",
    "uncertainty_counts",
]

"""Graph dataset condensation by one-step gradient matching."""

from .condense import CondenseConfig, SyntheticSet, condense, condense_bilevel, discretize
from .evaluation import EvalConfig, EvalReport, run_protocol
from .graphs import Graph, GraphDataset, parse_tu_dataset, split_dataset, toy_dataset
from .models import ModelConfig

__all__ = ["CondenseConfig", "EvalConfig", "EvalReport", "Graph", "GraphDataset", "ModelConfig",
           "SyntheticSet", "condense", "condense_bilevel", "discretize", "parse_tu_dataset",
           "run_protocol", "split_dataset", "toy_dataset"]

"""Dynamically pruned message passing for knowledge base completion."""

from .autodiff import Tape, Tensor
from .checkpoint import CheckpointError, DimensionError
from .config import Config, ConfigError, desk_config, parse_config
from .evaluation import compute_metrics, evaluate, rank_filtered
from .expansion import Horizons
from .graph import DataError, KnowledgeGraph, TripleSet, build_graph, load_splits, load_triples
from .params import ModelParams
from .training import NumericError, train
from .visualize import export_dot

__version__ = "0.1.0"

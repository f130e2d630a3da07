"""Graph OOD detection with guided prototypical graphs and FGW similarity."""

from .graph import Corpus, Graph, load_corpus, quantize_adjacency, uniform_weights, validate
from .ot import BACKEND, FgwConfig, fgw_distance, fgw_gradient, linear_ot, similarity

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Corpus",
    "FgwConfig",
    "Graph",
    "fgw_distance",
    "fgw_gradient",
    "linear_ot",
    "load_corpus",
    "quantize_adjacency",
    "similarity",
    "uniform_weights",
    "validate",
]

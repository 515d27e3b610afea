"""False-trigger mitigation by classifying ASR word lattices with graph neural networks."""

from .lattice import (
    Arc,
    ArcFeatures,
    GraphSample,
    Label,
    Lattice,
    best_path,
    build_line_graph,
    contains_trigger,
    parse_corpus,
    parse_lattice,
    serialize_corpus,
    serialize_lattice,
)
from .models import ModelConfig, ModelParams, Variant, init_params, model_forward, param_count

__version__ = "0.1.0"

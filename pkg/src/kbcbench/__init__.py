"""Knowledge-base completion workbench: embedding models, a path-rule
baseline, and ranking evaluation protocols."""

__version__ = "0.1.0"

from .kb import (
    KnowledgeBase,
    Triple,
    TypeConstraints,
    Vocab,
    build_kb,
    dataset_stats,
    load_triples,
    load_type_constraints,
    write_triples,
)
from .models import BlockLayout, init_params, load_checkpoint, save_checkpoint
from .scorers import Scorer, TableScorer

__all__ = [
    "__version__",
    "KnowledgeBase",
    "Triple",
    "TypeConstraints",
    "Vocab",
    "build_kb",
    "dataset_stats",
    "load_triples",
    "load_type_constraints",
    "write_triples",
    "BlockLayout",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "Scorer",
    "TableScorer",
]

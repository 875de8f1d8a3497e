"""Path-star task generation, a RASP interpreter, and RASP solvers for it."""
from .graph import PathStarGraph, TaskInstance, count_instances, sample_graph, sample_target
from .tokenizer import TokenizationOptions, TokenizedSample, Vocabulary, detokenize, parse_sample, tokenize

__all__ = [
    "PathStarGraph",
    "TaskInstance",
    "TokenizationOptions",
    "TokenizedSample",
    "Vocabulary",
    "count_instances",
    "detokenize",
    "parse_sample",
    "sample_graph",
    "sample_target",
    "tokenize",
]

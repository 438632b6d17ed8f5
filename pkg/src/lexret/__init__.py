"""Experiment engine for legal passage retrieval.

Library and CLI for passage retrieval experiments: BM25 and dense
retrieval over a passage pool, LLM-backed query rewriting and expansion,
and an evaluation harness with retrieval metrics, generation similarity
metrics, trial sampling, long-tail frequency analysis, and paired
significance testing.
"""

__version__ = "0.1.0"


class LexretError(Exception):
    """Base class for all errors raised by this package."""

"""Training side of the passage retrieval engine.

Builds instruction datasets from the engine's JSONL corpus files,
fine-tunes a rewriter language model on them, fine-tunes a retriever
encoder with in-batch or contrastive objectives, exports embeddings in
the engine's binary format, and serves the trained rewriter through an
OpenAI-compatible HTTP shim.
"""

__version__ = "0.1.0"


class TrainerError(Exception):
    """Base class for errors raised by this package."""

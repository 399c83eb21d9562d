"""Relevant-context self-attention for multi-turn dialogue generation, built on a small numpy autodiff engine."""

from .corpus import Batch, EncodedSession, Session, Vocab, build_vocab, encode_session, load_corpus, make_batch
from .model import ModelConfig, ReCoSa, sequence_nll

__version__ = "0.1.0"

__all__ = ["Batch", "EncodedSession", "Session", "Vocab", "build_vocab", "encode_session", "load_corpus",
           "make_batch", "ModelConfig", "ReCoSa", "sequence_nll"]

"""Attention-based translation with an adaptive sentinel gate, in plain numpy."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import SyntheticTaskSpec, Vocabulary, build_vocab, encode_sentence, load_parallel, make_batches, toy_splits
from .evaluation import bootstrap_significance, corpus_bleu, gate_analysis
from .model import ModelConfig, init_params, sentence_loss
from .search import beam_search, greedy_decode
from .training import train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "ModelConfig", "SyntheticTaskSpec", "Vocabulary", "beam_search", "bootstrap_significance",
    "build_vocab", "corpus_bleu", "encode_sentence", "gate_analysis", "greedy_decode", "init_params",
    "load_checkpoint", "load_parallel", "make_batches", "save_checkpoint", "sentence_loss", "toy_splits", "train",
]

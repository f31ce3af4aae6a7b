"""Nested variational autoencoder topic model for short texts, with a
collapsed Gibbs LDA baseline and clustering/coherence metrics."""

__version__ = "0.1.0"

from .corpus import Corpus, EmbeddingMatrix, Vocabulary, build_corpus, load_embeddings, preprocess
from .distributions import BaseNoise
from .model import DocBatch, ModelParams, backward, elbo, export_topics, forward_batch, infer_theta, init_params
from .trainer import TrainConfig, train

__all__ = [
    "BaseNoise", "Corpus", "DocBatch", "EmbeddingMatrix", "ModelParams", "TrainConfig",
    "Vocabulary", "backward", "build_corpus", "elbo", "export_topics", "forward_batch",
    "infer_theta", "init_params", "load_embeddings", "preprocess", "train",
]

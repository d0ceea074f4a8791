"""Sparse-attention encoder-decoder forecaster."""
from .attention import MultiHeadAttention, dense_attention, sparse_attention, sparsity_measure
from .config import ModelConfig, SizingError, desk_profile, paper_profile
from .decoder import Decoder, DecoderLayer
from .embed import DataEmbedding, StampEmbedding, TokenProjection, positional_embedding
from .encoder import DistilLayer, EncoderBranch, EncoderLayer, StackedEncoder
from .informer import Informer, decoder_inputs
from .layers import FeedForward, LayerNorm, Linear, max_pool2

__all__ = [
    "MultiHeadAttention", "dense_attention", "sparse_attention", "sparsity_measure",
    "ModelConfig", "SizingError", "desk_profile", "paper_profile",
    "Decoder", "DecoderLayer", "DataEmbedding", "StampEmbedding", "TokenProjection", "positional_embedding",
    "DistilLayer", "EncoderBranch", "EncoderLayer", "StackedEncoder", "Informer", "decoder_inputs",
    "FeedForward", "LayerNorm", "Linear", "max_pool2",
]

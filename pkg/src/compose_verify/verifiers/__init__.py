"""Verifier family over token similarity maps.

F0 global average, F1 MaxSim, F2 soft alignment with positional bias, F3 tiny
CNN, F4 tiny transformer over map patches. F3/F4 end in tanh so every
verifier scores on the cosine range [-1, 1].
"""

from .scores import AlignmentConfig, f0, f1, f2, f2_backward, soft_align
from .cnn import CnnParams, f3_forward, f3_forward_batch, f3_backward_batch, init_cnn_params
from .mapformer import (
    TransformerParams,
    f4_forward,
    f4_forward_batch,
    f4_backward_batch,
    init_transformer_params,
)
from .io import load_params, save_params
from .dispatch import VERIFIER_KINDS, is_learnable, score_map

__all__ = [
    "AlignmentConfig",
    "CnnParams",
    "TransformerParams",
    "VERIFIER_KINDS",
    "f0",
    "f1",
    "f2",
    "f2_backward",
    "f3_forward",
    "f3_forward_batch",
    "f3_backward_batch",
    "f4_forward",
    "f4_forward_batch",
    "f4_backward_batch",
    "init_cnn_params",
    "init_transformer_params",
    "is_learnable",
    "load_params",
    "save_params",
    "score_map",
    "soft_align",
]

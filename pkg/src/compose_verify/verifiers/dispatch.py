"""Uniform scoring entry point across the verifier family."""

from __future__ import annotations

import numpy as np

from .. import simmap
from ..errors import ShapeMismatch
from .cnn import f3_forward
from .mapformer import f4_forward
from .scores import AlignmentConfig, f0, f1, f2

VERIFIER_KINDS = ("f0", "f1", "f2", "f3", "f4")
LEARNABLE_KINDS = ("f2", "f3", "f4")


def is_learnable(kind: str) -> bool:
    return kind in LEARNABLE_KINDS


def score_map(kind: str, m: np.ndarray, params=None) -> float:
    """Score a raw cosine map with the chosen verifier.

    ``params`` is an AlignmentConfig for f2 (defaulted when omitted), and the
    trained parameter object for f3/f4. F3/F4 receive phi(M) internally.
    """
    if kind == "f0":
        return f0(m)
    if kind == "f1":
        return f1(m)
    if kind == "f2":
        return f2(m, params if params is not None else AlignmentConfig())
    if kind == "f3":
        return f3_forward(simmap.phi(m), params)
    if kind == "f4":
        return f4_forward(simmap.phi(m), params)
    raise ShapeMismatch(f"unknown verifier kind {kind!r}")

"""Closed-form verifiers: global average, MaxSim, and soft alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AlignmentConfig:
    """Positional-penalty weight and softmax temperature for soft alignment."""

    lam: float = 0.1
    tau_align: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.tau_align <= 0:
            raise ValueError("tau_align must be > 0")


def f0(m: np.ndarray) -> float:
    """Global average of the map.

    Uses a correctly-rounded sum so the value is bitwise invariant under any
    permutation of the map's entries.
    """
    m = np.asarray(m, dtype=np.float64)
    return math.fsum(m.reshape(-1)) / m.size


def f1(m: np.ndarray) -> float:
    """Late interaction / MaxSim: mean over rows of the row maximum."""
    m = np.asarray(m, dtype=np.float64)
    return math.fsum(np.max(m, axis=1)) / m.shape[0]


def _penalized_logits(m: np.ndarray, cfg: AlignmentConfig) -> np.ndarray:
    rows, cols = m.shape
    offset = np.abs(np.arange(rows)[:, None] - np.arange(cols)[None, :])
    return (m - cfg.lam * offset) / cfg.tau_align


def soft_align(m: np.ndarray, cfg: AlignmentConfig = AlignmentConfig()) -> np.ndarray:
    """Row-stochastic alignment: softmax over columns of the penalized map."""
    z = _penalized_logits(np.asarray(m, dtype=np.float64), cfg)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def f2(m: np.ndarray, cfg: AlignmentConfig = AlignmentConfig()) -> float:
    """Alignment-weighted map average: (1/m) sum_ij A_ij M_ij."""
    m = np.asarray(m, dtype=np.float64)
    a = soft_align(m, cfg)
    return float(np.sum(a * m) / m.shape[0])


def f2_backward(m: np.ndarray, cfg: AlignmentConfig = AlignmentConfig()):
    """Gradients of f2 w.r.t. the map and the (lam, tau) alignment knobs.

    Returns (dm, dlam, dtau).
    """
    m = np.asarray(m, dtype=np.float64)
    rows, cols = m.shape
    a = soft_align(m, cfg)
    row_scores = np.sum(a * m, axis=1, keepdims=True)
    # d f2 / d logits, by the softmax Jacobian applied to (M / rows)
    dz = a * (m - row_scores) / rows
    offset = np.abs(np.arange(rows)[:, None] - np.arange(cols)[None, :])
    dm = a / rows + dz / cfg.tau_align
    dlam = float(np.sum(dz * (-offset / cfg.tau_align)))
    logits = _penalized_logits(m, cfg)
    dtau = float(np.sum(dz * (-logits / cfg.tau_align)))
    return dm, dlam, dtau

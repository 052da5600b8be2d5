"""Token-token cosine maps and their verifier-facing transforms.

``build_sim_map`` produces the raw map of cosines in [-1, 1]; ``phi`` clips
and rescales it onto [0, 1]; ``psi`` pads/truncates to a square grid and cuts
it into flattened non-overlapping patches for the map transformer.

Padding fills with 0 *after* phi, i.e. cosine -1: padding can never look like
an alignment. Truncation keeps leading rows/columns, mirroring tokenizer
truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadPatchSize, DimMismatch

DEFAULT_PAD_SIDE = 64
DEFAULT_PATCH_SIDE = 8


@dataclass(frozen=True)
class PatchGrid:
    pad_side: int
    patch_side: int
    patches: np.ndarray = field(repr=False)  # (n_patches, patch_side**2)


def build_sim_map(q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """M[i][j] = dot(q_i, c_j) for row-normalized token matrices."""
    q = np.asarray(q, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if q.ndim != 2 or c.ndim != 2:
        raise DimMismatch("token matrices must be 2-D")
    if q.shape[1] != c.shape[1]:
        raise DimMismatch(f"dims differ: {q.shape[1]} vs {c.shape[1]}")
    return q @ c.T


def phi(m: np.ndarray) -> np.ndarray:
    """Clip to [-1, 1], then map affinely onto [0, 1]."""
    return (np.clip(m, -1.0, 1.0) + 1.0) / 2.0


def pad_to_square(m01: np.ndarray, side: int) -> np.ndarray:
    """Zero-pad (or lead-truncate) a phi-space map to side x side."""
    out = np.zeros((side, side), dtype=np.float64)
    rows = min(m01.shape[0], side)
    cols = min(m01.shape[1], side)
    out[:rows, :cols] = m01[:rows, :cols]
    return out


def psi(
    m01: np.ndarray,
    pad_side: int = DEFAULT_PAD_SIDE,
    patch_side: int = DEFAULT_PATCH_SIDE,
) -> PatchGrid:
    """Cut a phi-space map into flattened row-major patches.

    Raises:
        BadPatchSize: patch side does not divide the padded side.
    """
    if pad_side % patch_side != 0:
        raise BadPatchSize(f"patch side {patch_side} does not divide {pad_side}")
    square = pad_to_square(np.asarray(m01, dtype=np.float64), pad_side)
    per_side = pad_side // patch_side
    blocks = square.reshape(per_side, patch_side, per_side, patch_side)
    patches = blocks.transpose(0, 2, 1, 3).reshape(per_side * per_side, patch_side**2)
    return PatchGrid(pad_side=pad_side, patch_side=patch_side, patches=patches)

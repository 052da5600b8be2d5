"""Stage-1 candidate generation: exact top-K cosine search over pooled keys.

Exact search (no ANN) removes recall as a confound; keys are kept as one
contiguous row-major matrix so a query is a single matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, DuplicateId, EmptyIndex

UNIT_TOL = 1e-5


@dataclass(frozen=True)
class SearchConfig:
    k: int = 100
    threshold_tau: float | None = None


@dataclass(frozen=True)
class PooledIndex:
    dim: int
    ids: tuple[str, ...]
    keys: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.ids)


def build_index(keys: list[tuple[str, np.ndarray]]) -> PooledIndex:
    """Build an immutable index; insertion order is the tie-break order.

    Raises:
        EmptyIndex: no keys given.
        DimMismatch: keys of differing dimension, or a non-unit key.
        DuplicateId: repeated id.
    """
    if not keys:
        raise EmptyIndex("cannot build an index from zero keys")
    dim = int(np.asarray(keys[0][1]).shape[-1])
    ids: list[str] = []
    seen: set[str] = set()
    mat = np.empty((len(keys), dim))
    for row, (key_id, vec) in enumerate(keys):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != dim:
            raise DimMismatch(f"key {key_id!r} has dim {vec.shape[0]}, expected {dim}")
        if abs(np.linalg.norm(vec) - 1.0) > UNIT_TOL:
            raise DimMismatch(f"key {key_id!r} is not unit norm")
        if key_id in seen:
            raise DuplicateId(key_id)
        seen.add(key_id)
        ids.append(key_id)
        mat[row] = vec
    return PooledIndex(dim=dim, ids=tuple(ids), keys=mat)


def top_k(
    index: PooledIndex, query: np.ndarray, cfg: SearchConfig = SearchConfig()
) -> list[tuple[str, float]]:
    """Exact top-K by cosine, ties broken by insertion order.

    K larger than the index is clamped to the index size.
    """
    k = min(cfg.k, len(index))
    scores = index.keys @ np.asarray(query, dtype=np.float64).reshape(-1)
    n = scores.shape[0]
    if k < n:
        # Partition first, then keep every score tied with the k-th one so the
        # insertion-order tie rule survives the partition's arbitrary choices.
        part = np.argpartition(-scores, k - 1)[:k]
        kth = scores[part].min()
        cand = np.flatnonzero(scores >= kth)
    else:
        cand = np.arange(n)
    order = cand[np.lexsort((cand, -scores[cand]))][:k]
    return [(index.ids[i], float(scores[i])) for i in order]


def accept_threshold(q: np.ndarray, c: np.ndarray, tau: float) -> bool:
    """Cosine-threshold accept rule: true iff cos(q, c) >= tau (inclusive)."""
    return bool(float(np.dot(q, c)) >= tau)

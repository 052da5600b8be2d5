"""Deterministic trainable toy encoder: hashed token table, optional linear
mix, mean pooling, unit normalization.

There is no contextualization: a text's pooled key depends only on its token
multiset, which keeps the pooled representation an exactly commutative
bag-of-words superposition.
"""

from __future__ import annotations

import math
import struct
import unicodedata
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import BadMagic, EmptyAfterTokenization, TruncatedFile, ZeroRow

ENC1_MAGIC = b"ENC1"

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    vocab_buckets: int = 65536
    max_len: int = 64

    def __post_init__(self):
        if self.vocab_buckets < 2:
            raise ValueError("vocab_buckets must be >= 2")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class EncoderParams:
    """Hashed embedding table plus an optional square mixing matrix."""

    table: np.ndarray
    mix: np.ndarray | None
    dim: int

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"table": self.table}
        if self.mix is not None:
            out["mix"] = self.mix
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            table=self.table.copy(),
            mix=None if self.mix is None else self.mix.copy(),
            dim=self.dim,
        )


def init_encoder_params(
    dim: int = 64,
    vocab_buckets: int = 65536,
    seed: int = 42,
    with_mix: bool = False,
) -> EncoderParams:
    """Seeded Normal(0, 1/sqrt(d)) initialization; bitwise-reproducible."""
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    table = rng.normal(0.0, scale, size=(vocab_buckets, dim))
    mix = rng.normal(0.0, scale, size=(dim, dim)) if with_mix else None
    return EncoderParams(table=table, mix=mix, dim=dim)


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def tokenize(text: str, cfg: TokenizerConfig = TokenizerConfig()) -> list[int]:
    """Whitespace-split, punctuation-strip, hash to bucket ids.

    Raises:
        EmptyAfterTokenization: nothing survives splitting and stripping.
    """
    ids: list[int] = []
    for raw in text.split():
        token = _strip_punct(raw)
        if not token:
            continue
        if cfg.lowercase:
            token = token.lower()
        ids.append(fnv1a_64(token.encode("utf-8")) % cfg.vocab_buckets)
        if len(ids) == cfg.max_len:
            break
    if not ids:
        raise EmptyAfterTokenization(f"no tokens in {text!r}")
    return ids


def encode_tokens(ids: list[int], params: EncoderParams) -> np.ndarray:
    """Token matrix with rows normalize(mix @ table[id]); mix defaults to identity."""
    mat, _ = _encode_rows(ids, params)
    return mat


def encode_pooled(
    text: str, params: EncoderParams, cfg: TokenizerConfig = TokenizerConfig()
) -> np.ndarray:
    """tokenize -> encode_tokens -> mean pool -> unit normalize."""
    key, _ = encode_pooled_with_cache(tokenize(text, cfg), params)
    return key


# ------------------------------------------------------- training-side paths


def _encode_rows(ids: list[int], params: EncoderParams):
    gathered = params.table[ids]
    if params.mix is not None:
        pre = gathered @ params.mix.T
    else:
        pre = gathered
    norms = np.linalg.norm(pre, axis=1)
    if np.any(norms < 1e-12):
        raise ZeroRow(f"token bucket {ids[int(np.argmin(norms))]} encodes to zero")
    rows, norm_cache = nn.row_normalize(pre)
    return rows, (ids, gathered, norm_cache)


def encode_matrix_with_cache(ids: list[int], params: EncoderParams):
    """Forward pass returning the token matrix and a backward cache."""
    return _encode_rows(ids, params)


def encode_pooled_with_cache(ids: list[int], params: EncoderParams):
    """Forward pass returning the pooled unit key and a backward cache.

    The column sums are correctly rounded so the key is bitwise invariant
    under token permutation (the bag-of-words symmetry).
    """
    rows, row_cache = _encode_rows(ids, params)
    mean = (
        np.array([math.fsum(rows[:, j]) for j in range(rows.shape[1])]) / rows.shape[0]
    )
    norm = float(np.linalg.norm(mean))
    if norm < 1e-12:
        raise ZeroRow("pooled mean cancelled to near-zero norm")
    key, key_cache = nn.row_normalize(mean)
    return key, (row_cache, key_cache, rows.shape[0])


def matrix_backward(dmat: np.ndarray, cache, params: EncoderParams):
    """Gradients of a token-matrix output w.r.t. (table rows, mix).

    Returns (ids, per-row table gradients, mix gradient or None); the caller
    accumulates the rows into its table-gradient buffer.
    """
    ids, gathered, norm_cache = cache
    dpre = nn.row_normalize_backward(dmat, norm_cache)
    if params.mix is not None:
        dmix = dpre.T @ gathered
        dgather = dpre @ params.mix
    else:
        dmix = None
        dgather = dpre
    return ids, dgather, dmix


def pooled_backward(dkey: np.ndarray, cache, params: EncoderParams):
    """Gradients of a pooled-key output; same return shape as matrix_backward."""
    row_cache, key_cache, n_rows = cache
    dmean = nn.row_normalize_backward(dkey, key_cache)
    drows = np.tile(dmean / n_rows, (n_rows, 1))
    return matrix_backward(drows, row_cache, params)


class GradAccumulator:
    """Collects sparse table-row gradients and a dense mix gradient."""

    def __init__(self, params: EncoderParams):
        self._dim = params.dim
        self._ids: list[int] = []
        self._rows: list[np.ndarray] = []
        self.dmix = None if params.mix is None else np.zeros_like(params.mix)

    def add(self, ids, dgather, dmix) -> None:
        self._ids.extend(ids)
        self._rows.append(dgather)
        if dmix is not None:
            self.dmix += dmix

    def table_grad(self) -> nn.SparseRows:
        if not self._ids:
            return nn.SparseRows(np.empty(0, dtype=np.int64), np.empty((0, self._dim)))
        ids = np.asarray(self._ids, dtype=np.int64)
        rows = np.concatenate(self._rows, axis=0)
        uniq, inverse = np.unique(ids, return_inverse=True)
        summed = np.zeros((uniq.size, self._dim))
        np.add.at(summed, inverse, rows)
        return nn.SparseRows(uniq, summed)

    def grads(self) -> dict[str, object]:
        out: dict[str, object] = {"table": self.table_grad()}
        if self.dmix is not None:
            out["mix"] = self.dmix
        return out


# ----------------------------------------------------------------- ENC1 I/O


def save_encoder(path: str | Path, params: EncoderParams) -> None:
    buckets = params.table.shape[0]
    with open(path, "wb") as fh:
        fh.write(ENC1_MAGIC)
        fh.write(struct.pack("<IIB", params.dim, buckets, 1 if params.mix is not None else 0))
        fh.write(np.ascontiguousarray(params.table, dtype="<f4").tobytes())
        if params.mix is not None:
            fh.write(np.ascontiguousarray(params.mix, dtype="<f4").tobytes())


def load_encoder(path: str | Path) -> EncoderParams:
    data = Path(path).read_bytes()
    if data[:4] != ENC1_MAGIC:
        raise BadMagic("not an ENC1 file")
    if len(data) < 13:
        raise TruncatedFile("ENC1 header incomplete")
    dim, buckets, has_mix = struct.unpack("<IIB", data[4:13])
    pos = 13
    need = buckets * dim * 4 + (dim * dim * 4 if has_mix else 0)
    if len(data) - pos < need:
        raise TruncatedFile(f"ENC1 payload needs {need} bytes, found {len(data) - pos}")
    table = np.frombuffer(data, dtype="<f4", count=buckets * dim, offset=pos).reshape(
        buckets, dim
    )
    pos += buckets * dim * 4
    mix = None
    if has_mix:
        mix = np.frombuffer(data, dtype="<f4", count=dim * dim, offset=pos).reshape(dim, dim)
        mix = mix.astype(np.float64)
    return EncoderParams(table=table.astype(np.float64), mix=mix, dim=dim)

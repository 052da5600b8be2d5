"""Data model and bit-exact persistence for corpora, embeddings, and triplets.

Conventions used across the engine:

- a *token matrix* is a 2-D ``np.ndarray`` of shape ``(m, d)``, one row per
  token vector;
- a *pooled key* is a 1-D unit-norm ``np.ndarray`` of length ``d``;
- qrels are ``dict[qid, dict[docid, grade]]`` with non-negative integer grades.

Binary embedding store ("EMB1", little-endian throughout):

    magic  b"EMB1"
    u32    version (=1)
    u32    dim
    u64    record count
    id table, per record: u16 byte length + UTF-8 id bytes
    per record: u32 m, then m*dim float32 values (row-major)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    ParseError,
    TruncatedFile,
    ZeroRow,
)

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1
MAX_ID_BYTES = 256

FAMILIES = ("standard", "negation", "binding", "spatial", "paraphrase")

NORM_EPS = 1e-12


@dataclass(frozen=True)
class CorpusRecord:
    """One corpus entry: a unique text id plus the raw text."""

    id: str
    text: str


@dataclass(frozen=True)
class Triplet:
    """(anchor, positive, negative) training triple tagged with its family."""

    anchor: str
    positive: str
    negative: str
    family: str

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown triplet family: {self.family!r}")
        if not (self.anchor and self.positive and self.negative):
            raise ValueError("triplet fields must be non-empty")


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """Scale every row of a token matrix to unit Euclidean norm.

    Raises:
        ZeroRow: if any row has norm below 1e-12.
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise ZeroRow(f"row {int(np.argmin(norms))} has near-zero norm")
    return m / norms


def pool_mean(m: np.ndarray) -> np.ndarray:
    """Mean-pool token rows into a single unit-norm key.

    Column sums are correctly rounded, so the key is bitwise invariant under
    any permutation of the rows (mean pooling is a bag of tokens).

    Raises:
        ZeroRow: if the row mean has norm below 1e-12 (cancellation).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("pool_mean expects a non-empty (m, d) matrix")
    mean = np.array([math.fsum(m[:, j]) for j in range(m.shape[1])]) / m.shape[0]
    norm = float(np.linalg.norm(mean))
    if norm < NORM_EPS:
        raise ZeroRow("pooled mean cancelled to near-zero norm")
    return mean / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors; bitwise-identical inputs score exactly 1."""
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b))


def write_store(path: str | Path, records: list[tuple[str, np.ndarray]]) -> None:
    """Write (id, token matrix) records to an EMB1 file.

    All matrices must share one embedding dimension; values are rounded to
    float32 on disk. An empty record list produces a valid file with dim 0.
    """
    dim = 0
    seen: set[str] = set()
    for rec_id, mat in records:
        mat = np.asarray(mat)
        if mat.ndim != 2:
            raise DimMismatch(f"record {rec_id!r} is not a 2-D matrix")
        if dim == 0:
            dim = mat.shape[1]
        elif mat.shape[1] != dim:
            raise DimMismatch(
                f"record {rec_id!r} has dim {mat.shape[1]}, expected {dim}"
            )
        if rec_id in seen:
            raise DuplicateId(rec_id)
        seen.add(rec_id)
        if len(rec_id.encode("utf-8")) > MAX_ID_BYTES:
            raise ValueError(f"id longer than {MAX_ID_BYTES} UTF-8 bytes: {rec_id!r}")

    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<IIQ", EMB1_VERSION, dim, len(records)))
        for rec_id, _ in records:
            raw = rec_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        for _, mat in records:
            values = np.ascontiguousarray(mat, dtype="<f4")
            fh.write(struct.pack("<I", values.shape[0]))
            fh.write(values.tobytes())


def read_store(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Read an EMB1 file back into (id, float32 token matrix) records.

    Raises:
        BadMagic: wrong magic bytes or unsupported version.
        TruncatedFile: file ends before its declared payload.
    """
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedFile(f"needed {n} bytes at offset {pos}, file has {len(data)}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != EMB1_MAGIC:
        raise BadMagic("not an EMB1 file")
    version, dim, count = struct.unpack("<IIQ", take(16))
    if version != EMB1_VERSION:
        raise BadMagic(f"unsupported EMB1 version {version}")

    ids = []
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        ids.append(bytes(take(id_len)).decode("utf-8"))

    records = []
    for rec_id in ids:
        (m,) = struct.unpack("<I", take(4))
        mat = np.frombuffer(take(m * dim * 4), dtype="<f4").reshape(m, dim)
        records.append((rec_id, mat.copy()))
    return records


def load_corpus_jsonl(path: str | Path) -> list[CorpusRecord]:
    """Load a corpus from JSONL lines of ``{"id": ..., "text": ...}``."""
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise ParseError(lineno, "expected object with 'id' and 'text'")
            rec_id, text = str(obj["id"]), str(obj["text"])
            if len(text) < 1:
                raise ParseError(lineno, "empty text")
            if rec_id in seen:
                raise ParseError(lineno, f"duplicate id {rec_id!r}")
            seen.add(rec_id)
            records.append(CorpusRecord(rec_id, text))
    return records


def write_corpus_jsonl(path: str | Path, records: list[CorpusRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.id, "text": rec.text}, sort_keys=True))
            fh.write("\n")


def load_qrels_tsv(path: str | Path) -> dict[str, dict[str, int]]:
    """Load TREC-style qrels: 4-column TSV ``qid  0  docid  grade``."""
    qrels: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(lineno, f"expected 4 tab-separated columns, got {len(parts)}")
            qid, _iteration, docid, grade_str = parts
            try:
                grade = int(grade_str)
            except ValueError as exc:
                raise ParseError(lineno, f"non-integer grade {grade_str!r}") from exc
            if grade < 0:
                raise ParseError(lineno, f"negative grade {grade}")
            per_query = qrels.setdefault(qid, {})
            if docid in per_query:
                raise ParseError(lineno, f"duplicate judgment for ({qid!r}, {docid!r})")
            per_query[docid] = grade
    return qrels


def write_qrels_tsv(path: str | Path, qrels: dict[str, dict[str, int]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in qrels:
            for docid, grade in qrels[qid].items():
                fh.write(f"{qid}\t0\t{docid}\t{grade}\n")


def load_triplets_jsonl(path: str | Path) -> list[Triplet]:
    """Load triplets from JSONL with fields anchor/positive/negative/family."""
    triplets: list[Triplet] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc}") from exc
            try:
                triplets.append(
                    Triplet(
                        anchor=str(obj["anchor"]),
                        positive=str(obj["positive"]),
                        negative=str(obj["negative"]),
                        family=str(obj["family"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(lineno, str(exc)) from exc
    return triplets


def write_triplets_jsonl(path: str | Path, triplets: list[Triplet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(
                json.dumps(
                    {
                        "anchor": t.anchor,
                        "positive": t.positive,
                        "negative": t.negative,
                        "family": t.family,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")

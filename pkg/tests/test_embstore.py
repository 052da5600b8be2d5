import numpy as np
import pytest

from compose_verify import embstore
from compose_verify.errors import (
    BadMagic,
    DimMismatch,
    DuplicateId,
    ParseError,
    TruncatedFile,
    ZeroRow,
)


def test_normalize_rows_345_triangle():
    out = embstore.normalize_rows(np.array([[3.0, 4.0]]))
    assert np.allclose(out, [[0.6, 0.8]], atol=1e-12)


def test_normalize_rows_unit_row_unchanged():
    row = np.array([[1.0 / np.sqrt(2), -1.0 / np.sqrt(2)]])
    out = embstore.normalize_rows(row)
    assert np.max(np.abs(out - row)) < 1e-7


def test_normalize_rows_zero_row_raises():
    with pytest.raises(ZeroRow):
        embstore.normalize_rows(np.array([[0.0, 0.0]]))


def test_normalize_rows_idempotent():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(20, 16))
    once = embstore.normalize_rows(m)
    twice = embstore.normalize_rows(once)
    assert np.max(np.abs(twice - once)) < 1e-7


def test_pool_mean_single_unit_row():
    u = np.array([[0.6, 0.8]])
    key = embstore.pool_mean(u)
    assert np.allclose(key, [0.6, 0.8], atol=1e-12)


def test_pool_mean_repeated_row():
    u = np.array([0.6, 0.8])
    key = embstore.pool_mean(np.stack([u, u]))
    assert np.allclose(key, u, atol=1e-12)


def test_pool_mean_cancellation():
    u = np.array([0.6, 0.8])
    with pytest.raises(ZeroRow):
        embstore.pool_mean(np.stack([u, -u]))


def test_pool_mean_output_unit_norm():
    rng = np.random.default_rng(1)
    for _ in range(50):
        m = embstore.normalize_rows(rng.normal(size=(rng.integers(1, 9), 8)))
        key = embstore.pool_mean(m)
        assert abs(np.linalg.norm(key) - 1.0) < 1e-5


def test_store_roundtrip_empty(tmp_path):
    path = tmp_path / "empty.emb1"
    embstore.write_store(path, [])
    assert embstore.read_store(path) == []


def test_store_file_size_one_record(tmp_path):
    # header: 4 magic + 4 version + 4 dim + 8 count; id table: 2 + len(id);
    # record: 4 (m) + m*d*4 payload
    path = tmp_path / "one.emb1"
    mat = np.arange(8, dtype=np.float32).reshape(2, 4)
    embstore.write_store(path, [("x", mat)])
    expected = (4 + 4 + 4 + 8) + (2 + 1) + 4 + 2 * 4 * 4
    assert path.stat().st_size == expected


def test_store_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    records = []
    for i in range(13):
        m = int(rng.integers(1, 10))
        records.append((f"doc-{i}", rng.normal(size=(m, 6)).astype(np.float32)))
    p1, p2 = tmp_path / "a.emb1", tmp_path / "b.emb1"
    embstore.write_store(p1, records)
    loaded = embstore.read_store(p1)
    embstore.write_store(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    for (id_a, mat_a), (id_b, mat_b) in zip(records, loaded):
        assert id_a == id_b
        assert np.array_equal(mat_a, mat_b)


def test_store_bad_magic(tmp_path):
    path = tmp_path / "bad.emb1"
    mat = np.ones((1, 2), dtype=np.float32)
    embstore.write_store(path, [("a", mat)])
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagic):
        embstore.read_store(path)


def test_store_truncated(tmp_path):
    path = tmp_path / "trunc.emb1"
    embstore.write_store(path, [("a", np.ones((3, 4), dtype=np.float32))])
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(TruncatedFile):
        embstore.read_store(path)


def test_store_dim_mismatch(tmp_path):
    with pytest.raises(DimMismatch):
        embstore.write_store(
            tmp_path / "x.emb1",
            [("a", np.ones((1, 2))), ("b", np.ones((1, 3)))],
        )


def test_store_duplicate_id(tmp_path):
    with pytest.raises(DuplicateId):
        embstore.write_store(
            tmp_path / "x.emb1",
            [("a", np.ones((1, 2))), ("a", np.ones((1, 2)))],
        )


def test_corpus_jsonl_roundtrip(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id":"d1","text":"the dog bit the man"}\n')
    records = embstore.load_corpus_jsonl(path)
    assert records == [embstore.CorpusRecord("d1", "the dog bit the man")]
    out = tmp_path / "out.jsonl"
    embstore.write_corpus_jsonl(out, records)
    assert embstore.load_corpus_jsonl(out) == records


def test_corpus_duplicate_id(tmp_path):
    path = tmp_path / "corpus.jsonl"
    path.write_text('{"id":"d1","text":"a"}\n{"id":"d1","text":"b"}\n')
    with pytest.raises(ParseError) as err:
        embstore.load_corpus_jsonl(path)
    assert err.value.line == 2


def test_qrels_trec_line(tmp_path):
    path = tmp_path / "qrels.tsv"
    path.write_text("q1\t0\td1\t1\n")
    assert embstore.load_qrels_tsv(path) == {"q1": {"d1": 1}}


def test_qrels_negative_grade(tmp_path):
    path = tmp_path / "qrels.tsv"
    path.write_text("q1\t0\td1\t-1\n")
    with pytest.raises(ParseError):
        embstore.load_qrels_tsv(path)


def test_qrels_roundtrip(tmp_path):
    qrels = {"q1": {"d1": 1, "d2": 0}, "q2": {"d3": 2}}
    path = tmp_path / "qrels.tsv"
    embstore.write_qrels_tsv(path, qrels)
    assert embstore.load_qrels_tsv(path) == qrels


def test_triplets_jsonl_roundtrip(tmp_path):
    triplets = [
        embstore.Triplet("a sentence here", "b sentence", "c sentence", "standard"),
        embstore.Triplet("x one", "x one", "x two", "binding"),
    ]
    path = tmp_path / "trip.jsonl"
    embstore.write_triplets_jsonl(path, triplets)
    assert embstore.load_triplets_jsonl(path) == triplets


def test_triplets_bad_family(tmp_path):
    path = tmp_path / "trip.jsonl"
    path.write_text('{"anchor":"a","positive":"b","negative":"c","family":"weird"}\n')
    with pytest.raises(ParseError):
        embstore.load_triplets_jsonl(path)

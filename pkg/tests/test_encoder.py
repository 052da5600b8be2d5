import numpy as np
import pytest

from compose_verify import encoder, nn
from compose_verify.errors import BadMagic, EmptyAfterTokenization, TruncatedFile

CFG = encoder.TokenizerConfig(vocab_buckets=4096, max_len=16)


def test_tokenize_case_folding():
    assert encoder.tokenize("The dog", CFG) == encoder.tokenize("the DOG", CFG)


def test_tokenize_truncation():
    text = " ".join(f"w{i}" for i in range(CFG.max_len + 5))
    assert len(encoder.tokenize(text, CFG)) == CFG.max_len


def test_tokenize_whitespace_only():
    with pytest.raises(EmptyAfterTokenization):
        encoder.tokenize("   ", CFG)


def test_tokenize_strips_punctuation():
    assert encoder.tokenize('"dog,"', CFG) == encoder.tokenize("dog", CFG)


def test_encode_tokens_repeated_token_identical_rows():
    params = encoder.init_encoder_params(dim=8, vocab_buckets=64, seed=1)
    mat = encoder.encode_tokens([3, 3, 5], params)
    assert np.array_equal(mat[0], mat[1])
    assert not np.array_equal(mat[0], mat[2])


def test_encode_tokens_identity_mix_prenormalized_row():
    params = encoder.init_encoder_params(dim=4, vocab_buckets=8, seed=0, with_mix=True)
    params.mix = np.eye(4)
    u = np.array([0.5, 0.5, 0.5, 0.5])
    params.table[2] = u
    mat = encoder.encode_tokens([2], params)
    assert np.allclose(mat[0], u, atol=1e-12)


def test_encode_purity_bitwise():
    params = encoder.init_encoder_params(dim=16, vocab_buckets=CFG.vocab_buckets, seed=3)
    a = encoder.encode_tokens(encoder.tokenize("the dog bit the man", CFG), params)
    b = encoder.encode_tokens(encoder.tokenize("the dog bit the man", CFG), params)
    assert np.array_equal(a, b)


def test_pooled_single_token_is_table_row():
    params = encoder.init_encoder_params(dim=8, vocab_buckets=4096, seed=2)
    ids = encoder.tokenize("dog", CFG)
    row = encoder.encode_tokens(ids, params)[0]
    key = encoder.encode_pooled("dog", params, CFG)
    assert np.allclose(key, row, atol=1e-12)


def test_pooled_permutation_invariance_exact():
    params = encoder.init_encoder_params(dim=16, vocab_buckets=4096, seed=4)
    k1 = encoder.encode_pooled("the dog bit the man", params, CFG)
    k2 = encoder.encode_pooled("the man bit the dog", params, CFG)
    assert float(k1 @ k2) == pytest.approx(1.0, abs=1e-12)


def test_init_deterministic():
    a = encoder.init_encoder_params(dim=8, vocab_buckets=128, seed=42)
    b = encoder.init_encoder_params(dim=8, vocab_buckets=128, seed=42)
    c = encoder.init_encoder_params(dim=8, vocab_buckets=128, seed=43)
    assert np.array_equal(a.table, b.table)
    assert not np.array_equal(a.table, c.table)


def test_enc1_roundtrip(tmp_path):
    params = encoder.init_encoder_params(dim=8, vocab_buckets=32, seed=5, with_mix=True)
    path = tmp_path / "enc.enc1"
    encoder.save_encoder(path, params)
    loaded = encoder.load_encoder(path)
    assert loaded.dim == 8
    assert np.allclose(loaded.table, params.table, atol=1e-6)
    assert np.allclose(loaded.mix, params.mix, atol=1e-6)
    # a second save is byte-identical (f32 round-trip is exact)
    path2 = tmp_path / "enc2.enc1"
    encoder.save_encoder(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_enc1_bad_magic(tmp_path):
    path = tmp_path / "bad.enc1"
    path.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(BadMagic):
        encoder.load_encoder(path)


def test_enc1_truncated(tmp_path):
    params = encoder.init_encoder_params(dim=4, vocab_buckets=8, seed=0)
    path = tmp_path / "t.enc1"
    encoder.save_encoder(path, params)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(TruncatedFile):
        encoder.load_encoder(path)


def _pooled_loss(params, batches, weights):
    total = 0.0
    for ids, w in zip(batches, weights):
        key, _ = encoder.encode_pooled_with_cache(ids, params)
        total += float(key @ w)
    return total


def test_encoder_gradient_finite_difference():
    # 3-token batch, d=8, central differences at 1e-4: rel error <= 1e-4
    params = encoder.init_encoder_params(dim=8, vocab_buckets=24, seed=7, with_mix=True)
    rng = np.random.default_rng(11)
    batches = [[1, 5, 9], [5, 2, 2], [15, 0, 9]]
    weights = [rng.normal(size=8) for _ in batches]

    acc = encoder.GradAccumulator(params)
    for ids, w in zip(batches, weights):
        key, cache = encoder.encode_pooled_with_cache(ids, params)
        acc.add(*encoder.pooled_backward(w, cache, params))
    sparse = acc.table_grad()
    dtable = np.zeros_like(params.table)
    dtable[sparse.ids] = sparse.rows
    analytic = {"table": dtable, "mix": acc.dmix}

    err = nn.grad_check(
        lambda: _pooled_loss(params, batches, weights),
        {"table": params.table, "mix": params.mix},
        analytic,
        max_elems=400,
    )
    assert err <= 1e-4


def test_encoder_zero_upstream_zero_grad():
    params = encoder.init_encoder_params(dim=8, vocab_buckets=24, seed=7)
    acc = encoder.GradAccumulator(params)
    key, cache = encoder.encode_pooled_with_cache([1, 2, 3], params)
    acc.add(*encoder.pooled_backward(np.zeros(8), cache, params))
    sparse = acc.table_grad()
    assert np.all(sparse.rows == 0.0)


def test_encoder_untouched_rows_zero_grad():
    params = encoder.init_encoder_params(dim=8, vocab_buckets=24, seed=7)
    acc = encoder.GradAccumulator(params)
    key, cache = encoder.encode_pooled_with_cache([1, 2], params)
    acc.add(*encoder.pooled_backward(np.ones(8), cache, params))
    sparse = acc.table_grad()
    assert set(sparse.ids.tolist()) == {1, 2}

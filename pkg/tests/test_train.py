import math

import numpy as np
import pytest

from compose_verify import datagen, encoder, evalkit, index, train, verifiers
from compose_verify.embstore import pool_mean
from compose_verify.errors import DataEmpty, NonLearnableKind

TOK = encoder.TokenizerConfig(vocab_buckets=2048, max_len=32)


def small_encoder(seed=0):
    return encoder.init_encoder_params(dim=32, vocab_buckets=2048, seed=seed)


def small_f4(seed=0):
    return verifiers.init_transformer_params(
        seed=seed, pad_side=16, patch_side=4, d_model=32, n_heads=4, n_layers=2, ffn=64
    )


def test_mnrl_saturated_scores():
    scores = np.array([[10.0, -10.0], [-10.0, 10.0]])
    loss, _ = train.mnrl_loss(scores, 0.1)
    assert loss < 1e-6


def test_mnrl_uniform_scores_ln2():
    scores = np.zeros((2, 2))
    loss, _ = train.mnrl_loss(scores, 0.1)
    assert loss == pytest.approx(math.log(2.0), abs=1e-12)


def test_mnrl_equals_ln_cols_on_equal_scores():
    for b, h in ((2, 0), (3, 2), (4, 4)):
        scores = np.full((b, b + h), 0.37)
        loss, _ = train.mnrl_loss(scores, 0.1)
        assert loss == pytest.approx(math.log(b + h), abs=1e-12)


def test_mnrl_gradient_matches_finite_differences():
    assert train.grad_check_mnrl() <= 1e-5


def test_mnrl_loss_nonnegative():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores = rng.normal(size=(4, 8))
        loss, _ = train.mnrl_loss(scores, 0.1)
        assert loss >= 0.0


def _toy_triplets(n=300):
    world = datagen.build_world(42, "train")
    return datagen.gen_standard_triplets(world, n)


def test_train_encoder_lr_zero_is_noop():
    triplets = _toy_triplets(64)
    init = small_encoder()
    cfg = train.TrainConfig(regime="encoder_A", lr_encoder=0.0, batch_size=8, steps=5)
    params, _log = train.train_encoder(triplets, cfg, TOK, init_params=init)
    assert np.array_equal(params.table, init.table)


def test_train_encoder_deterministic_and_seed_sensitive():
    triplets = _toy_triplets(96)
    kwargs = dict(tok_cfg=TOK, init_params=small_encoder())
    cfg42 = train.TrainConfig(regime="encoder_A", lr_encoder=0.05, batch_size=8, steps=20)
    a, log_a = train.train_encoder(triplets, cfg42, **kwargs)
    b, log_b = train.train_encoder(triplets, cfg42, **kwargs)
    assert np.array_equal(a.table, b.table)
    assert log_a.entries == log_b.entries
    cfg43 = train.TrainConfig(
        regime="encoder_A", lr_encoder=0.05, batch_size=8, steps=20, seed=43
    )
    c, _ = train.train_encoder(triplets, cfg43, **kwargs)
    assert not np.array_equal(a.table, c.table)


def _retrieval_metrics(params, corpus, queries, qrels):
    keys = [(r.id, pool_mean(encoder.encode_tokens(encoder.tokenize(r.text, TOK), params)))
            for r in corpus]
    idx = index.build_index(keys)
    run = {}
    for q in queries:
        q_key = pool_mean(encoder.encode_tokens(encoder.tokenize(q.text, TOK), params))
        run[q.id] = index.top_k(idx, q_key, index.SearchConfig(k=10))
    return evalkit.ndcg_at_k(run, qrels, 10), evalkit.acc_at_1(run, qrels)


def test_train_encoder_improves_heldout_in_domain_accuracy():
    world = datagen.build_world(42, "train")
    triplets = datagen.gen_standard_triplets(world, 600)
    corpus, queries, qrels = datagen.gen_retrieval_eval(world, 60, 240, skip=600)
    init = small_encoder()
    _, acc_before = _retrieval_metrics(init, corpus, queries, qrels)
    cfg = train.TrainConfig(regime="encoder_A", lr_encoder=0.05, batch_size=16, steps=250)
    params, log = train.train_encoder(triplets, cfg, TOK, init_params=init)
    _, acc_after = _retrieval_metrics(params, corpus, queries, qrels)
    assert acc_after > acc_before
    assert log.entries[-1]["step"] == 250


def test_train_verifier_rejects_parameter_free_kinds():
    triplets = _toy_triplets(32)
    cfg = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=2)
    for kind in ("f0", "f1"):
        with pytest.raises(NonLearnableKind):
            train.train_verifier(kind, triplets, cfg, small_encoder(), TOK)


def test_train_verifier_empty_data():
    cfg = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=2)
    with pytest.raises(DataEmpty):
        train.train_verifier("f4", [], cfg, small_encoder(), TOK)


def test_train_verifier_loss_decreases():
    world = datagen.build_world(42, "train")
    pairs = datagen.gen_pairs(world, 40)
    triplets = datagen.make_structural_triplets(pairs)
    cfg = train.TrainConfig(
        regime="verifier_frozen", batch_size=8, steps=50, lr_verifier=3e-3
    )
    _, log = train.train_verifier(
        "f4", triplets, cfg, small_encoder(), TOK, init_params=small_f4()
    )
    losses = [e["loss"] for e in log.entries if e.get("loss") is not None]
    assert losses[-1] < losses[0]


def test_train_verifier_seed_determinism():
    triplets = _toy_triplets(48)
    cfg = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=8)
    a, _ = train.train_verifier("f4", triplets, cfg, small_encoder(), TOK,
                                init_params=small_f4())
    b, _ = train.train_verifier("f4", triplets, cfg, small_encoder(), TOK,
                                init_params=small_f4())
    for name in a.tensors:
        assert np.array_equal(a.tensors[name], b.tensors[name])
    cfg43 = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=8, seed=43)
    c, _ = train.train_verifier("f4", triplets, cfg43, small_encoder(), TOK,
                                init_params=small_f4())
    assert any(not np.array_equal(a.tensors[n], c.tensors[n]) for n in a.tensors)


def test_train_f2_fits_alignment_knobs():
    world = datagen.build_world(42, "train")
    triplets = datagen.make_structural_triplets(datagen.gen_pairs(world, 24))
    cfg = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=10,
                            lr_verifier=1e-2)
    fitted, _ = train.train_verifier("f2", triplets, cfg, small_encoder(), TOK)
    assert fitted.tau_align > 0
    assert fitted.lam >= 0


def test_end_to_end_with_frozen_encoder_matches_frozen_regime():
    triplets = _toy_triplets(48)
    base = small_encoder()
    cfg_frozen = train.TrainConfig(regime="verifier_frozen", batch_size=4, steps=6)
    frozen_params, _ = train.train_verifier(
        "f4", triplets, cfg_frozen, base, TOK, init_params=small_f4()
    )
    cfg_e2e = train.TrainConfig(
        regime="end_to_end", lr_encoder=0.0, batch_size=4, steps=6
    )
    e_params, v_params, _ = train.train_end_to_end(
        "f4", triplets, cfg_e2e, base, TOK, init_params=small_f4()
    )
    assert np.array_equal(e_params.table, base.table)
    for name in frozen_params.tensors:
        assert np.array_equal(frozen_params.tensors[name], v_params.tensors[name])


def test_end_to_end_has_gradient_flow_into_tokens():
    triplets = _toy_triplets(48)
    base = small_encoder()
    cfg = train.TrainConfig(regime="end_to_end", lr_encoder=0.05, batch_size=4, steps=6)
    e_params, _, _ = train.train_end_to_end(
        "f4", triplets, cfg, base, TOK, init_params=small_f4()
    )
    assert not np.array_equal(e_params.table, base.table)


def test_perturbing_token_embedding_changes_f4_score():
    # finite difference on one coordinate of one token vector
    params = small_encoder()
    f4 = small_f4()
    from compose_verify import simmap

    ids_q = encoder.tokenize("the dog chased the ball", TOK)
    ids_c = encoder.tokenize("the dog chased the ball in the park", TOK)

    def score():
        q = encoder.encode_tokens(ids_q, params)
        c = encoder.encode_tokens(ids_c, params)
        m01 = simmap.phi(simmap.build_sim_map(q, c))
        return verifiers.f4_forward(m01, f4)

    before = score()
    params.table[ids_q[1], 3] += 1e-3
    after = score()
    assert after != before


def test_grad_check_suite():
    assert train.grad_check_encoder() <= 1e-4
    assert train.grad_check_verifier("f3") <= 1e-4
    assert train.grad_check_verifier("f4") <= 1e-4


def test_training_log_jsonl(tmp_path):
    triplets = _toy_triplets(48)
    cfg = train.TrainConfig(regime="encoder_A", lr_encoder=0.01, batch_size=8, steps=10)
    _, log = train.train_encoder(triplets, cfg, TOK, init_params=small_encoder())
    path = tmp_path / "log.jsonl"
    log.write_jsonl(path)
    import json

    lines = path.read_text().splitlines()
    header = json.loads(lines[0])
    assert header["config"]["regime"] == "encoder_A"
    assert all("step" in json.loads(line) for line in lines[1:])

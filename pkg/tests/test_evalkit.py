import math

import numpy as np
import pytest

from compose_verify import datagen, encoder, evalkit
from compose_verify.datagen import PairRecord
from compose_verify.errors import MissingEmbedding, NoJudgedQueries


# --- independent brute-force references, written straight from the formulas


def reference_ndcg(run, qrels, k):
    values = []
    for qid, ranked in run.items():
        judgments = qrels.get(qid, {})
        relevant = {d: g for d, g in judgments.items() if g > 0}
        if not relevant:
            continue
        gains = []
        for position, (docid, _s) in enumerate(ranked):
            if position >= k:
                break
            g = judgments.get(docid, 0)
            gains.append((2**g - 1) / math.log2(position + 2))
        best = []
        for position, g in enumerate(sorted(judgments.values(), reverse=True)):
            if position >= k:
                break
            best.append((2**g - 1) / math.log2(position + 2))
        values.append(sum(gains) / sum(best))
    if not values:
        raise ValueError("nothing judged")
    return sum(values) / len(values)


def reference_acc1(run, qrels):
    values = []
    for qid, ranked in run.items():
        judgments = qrels.get(qid, {})
        if not any(g > 0 for g in judgments.values()):
            continue
        values.append(1.0 if ranked and judgments.get(ranked[0][0], 0) >= 1 else 0.0)
    return sum(values) / len(values)


def random_instance(rng, n_queries=8, n_docs=30):
    run = {}
    qrels = {}
    for q in range(n_queries):
        qid = f"q{q}"
        docs = [f"d{d}" for d in rng.permutation(n_docs)[: rng.integers(5, 15)]]
        scores = np.sort(rng.uniform(size=len(docs)))[::-1]
        run[qid] = list(zip(docs, scores.tolist()))
        graded = rng.permutation(n_docs)[: rng.integers(1, 6)]
        qrels[qid] = {f"d{d}": int(rng.integers(0, 3)) for d in graded}
    return run, qrels


def test_ndcg_single_relevant_rank1():
    run = {"q1": [("d1", 0.9), ("d2", 0.5)]}
    qrels = {"q1": {"d1": 1}}
    assert evalkit.ndcg_at_k(run, qrels, 10) == pytest.approx(1.0, abs=1e-12)


def test_ndcg_single_relevant_rank2():
    run = {"q1": [("d2", 0.9), ("d1", 0.5)]}
    qrels = {"q1": {"d1": 1}}
    assert evalkit.ndcg_at_k(run, qrels, 10) == pytest.approx(1.0 / math.log2(3), abs=1e-9)


def test_ndcg_matches_reference_on_random_runs():
    rng = np.random.default_rng(0)
    for _ in range(200):
        run, qrels = random_instance(rng)
        try:
            expected = reference_ndcg(run, qrels, 10)
        except ValueError:
            with pytest.raises(NoJudgedQueries):
                evalkit.ndcg_at_k(run, qrels, 10)
            continue
        assert evalkit.ndcg_at_k(run, qrels, 10) == pytest.approx(expected, abs=1e-9)


def test_acc1_matches_reference_on_random_runs():
    rng = np.random.default_rng(1)
    for _ in range(200):
        run, qrels = random_instance(rng)
        try:
            expected = reference_acc1(run, qrels)
        except ZeroDivisionError:
            continue
        assert evalkit.acc_at_1(run, qrels) == pytest.approx(expected, abs=1e-9)


def test_acc1_trivial_cases():
    run = {"q1": [("d1", 1.0)], "q2": [("d9", 1.0)], "q3": [("d3", 1.0)], "q4": [("d4", 1.0)]}
    qrels = {
        "q1": {"d1": 1},
        "q2": {"d2": 1},
        "q3": {"d3": 2},
        "q4": {"d4": 1},
    }
    assert evalkit.acc_at_1(run, qrels) == pytest.approx(0.75)


def test_no_judged_queries():
    with pytest.raises(NoJudgedQueries):
        evalkit.ndcg_at_k({"q1": [("d1", 1.0)]}, {"q1": {"d1": 0}}, 10)


# ------------------------------------------------------------------ rerank


def _toy_embeddings():
    cfg = encoder.TokenizerConfig(vocab_buckets=512, max_len=16)
    params = encoder.init_encoder_params(dim=16, vocab_buckets=512, seed=0)
    texts = {
        "q0": "the dog chased the ball",
        "d0": "the dog chased the ball in the park",
        "d1": "the cat watched the bird",
        "d2": "a lamp is in the office",
    }
    return {
        key: encoder.encode_tokens(encoder.tokenize(text, cfg), params)
        for key, text in texts.items()
    }


def test_rerank_is_permutation():
    embeddings = _toy_embeddings()
    run = {"q0": [("d0", 0.9), ("d1", 0.5), ("d2", 0.1)]}
    out = evalkit.rerank(run, evalkit.VerifierPairScorer("f1"), embeddings)
    assert sorted(d for d, _ in out["q0"]) == ["d0", "d1", "d2"]


def test_rerank_constant_scorer_keeps_order():
    class Flat:
        def scores(self, q, cands):
            return np.zeros(len(cands))

    embeddings = _toy_embeddings()
    run = {"q0": [("d0", 0.9), ("d1", 0.5), ("d2", 0.1)]}
    out = evalkit.rerank(run, Flat(), embeddings)
    assert [d for d, _ in out["q0"]] == ["d0", "d1", "d2"]


def test_rerank_with_pooled_cosine_reproduces_stage1_order():
    embeddings = _toy_embeddings()
    from compose_verify.embstore import cosine, pool_mean

    q_key = pool_mean(embeddings["q0"])
    stage1 = sorted(
        ((d, cosine(q_key, pool_mean(embeddings[d]))) for d in ("d0", "d1", "d2")),
        key=lambda item: -item[1],
    )
    run = {"q0": stage1}
    out = evalkit.rerank(run, evalkit.CosinePairScorer(), embeddings)
    assert [d for d, _ in out["q0"]] == [d for d, _ in stage1]


def test_rerank_missing_embedding():
    embeddings = _toy_embeddings()
    run = {"q0": [("unknown", 1.0)]}
    with pytest.raises(MissingEmbedding):
        evalkit.rerank(run, evalkit.CosinePairScorer(), embeddings)


# --------------------------------------------------------------- AUC / near-miss


def test_auc_perfect_separation():
    assert evalkit.auc_scores(np.array([0.9, 0.8]), np.array([0.1, 0.2])) == 1.0


def test_auc_all_ties():
    assert evalkit.auc_scores(np.ones(5), np.ones(7)) == pytest.approx(0.5)


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(2)
    pos = rng.uniform(size=1500)
    neg = rng.uniform(size=1500)
    assert evalkit.auc_scores(pos, neg) == pytest.approx(0.5, abs=0.05)


def test_nearmiss_binding_mean_exactly_one_under_pooled_cosine():
    world = datagen.build_world(42, "train")
    pairs = [p for p in datagen.gen_pairs(world, 12) if p.family == "binding"]
    cfg = encoder.TokenizerConfig(vocab_buckets=2048, max_len=32)
    params = encoder.init_encoder_params(dim=32, vocab_buckets=2048, seed=1)

    from compose_verify.embstore import cosine

    def scorer(s1, s2):
        return cosine(
            encoder.encode_pooled(s1, params, cfg), encoder.encode_pooled(s2, params, cfg)
        )

    report = evalkit.nearmiss_eval(pairs, scorer)
    assert report.families["binding"].mean == 1.0
    assert report.overall_auc is None  # no paraphrases in the input


def test_nearmiss_perfect_scorer_auc_one():
    pairs = [
        PairRecord("a sentence about cats", "a sentence about cats ok", "paraphrase", False),
        PairRecord("a sentence about dogs", "a sentence about dogs ok", "negation", True),
    ] * 5
    scores = {"paraphrase": 0.9, "negation": 0.1}

    def scorer(s1, s2):
        # keyed by membership: near-miss sentences mention dogs
        return scores["negation" if "dogs" in s1 else "paraphrase"]

    report = evalkit.nearmiss_eval(pairs, scorer)
    assert report.overall_auc == 1.0
    assert report.families["negation"].auc_vs_paraphrase == 1.0


def test_cosine_histogram_identical_pairs_single_bin():
    pairs = [PairRecord("same sentence twice okay", "same sentence twice", "spatial", True)] * 4

    def encode_key(text):
        return np.array([1.0, 0.0])

    hist = evalkit.cosine_histogram(pairs, encode_key)
    assert hist["spatial"].sum() == 4
    assert hist["spatial"][-1] == 4


def test_cosine_histogram_counts_sum(tmp_path):
    world = datagen.build_world(42, "train")
    pairs = datagen.gen_pairs(world, 6)
    cfg = encoder.TokenizerConfig(vocab_buckets=2048, max_len=32)
    params = encoder.init_encoder_params(dim=32, vocab_buckets=2048, seed=2)

    def encode_key(text):
        return encoder.encode_pooled(text, params, cfg)

    hist = evalkit.cosine_histogram(pairs, encode_key)
    per_family = {f: sum(p.family == f for p in pairs) for f in hist}
    for family, counts in hist.items():
        assert counts.sum() == per_family[family]
    evalkit.write_histogram_csv(hist, tmp_path / "hist.csv")
    lines = (tmp_path / "hist.csv").read_text().splitlines()
    assert len(lines) == 1 + len(hist) * evalkit.HISTOGRAM_BINS

"""Experiment pipelines behind the command-line interface.

Everything here is a deterministic function of a RunConfig: worlds, datasets,
Model A/B encoder training, the two-stage retrieval evaluation, the verifier
grid, and the consolidated multi-seed report.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import datagen, encoder as enc, evalkit, index, simmap, train, verifiers
from .embstore import CorpusRecord, Triplet, cosine, pool_mean
from .errors import UnknownConfigKey


@dataclass
class RunConfig:
    """Flat experiment configuration; every key has a default.

    The paper-scale optimizer defaults (lr 2e-5 / 1e-4) assume fine-tuning a
    pretrained backbone; the toy encoder starts from random init, so the
    pipeline defaults use correspondingly larger steps.
    """

    seed: int = 42
    seeds: str = "42,43,44"
    out: str = "runs"
    # encoder / tokenizer
    dim: int = 64
    vocab_buckets: int = 65536
    max_len: int = 64
    lowercase: bool = True
    # data
    pairs_per_family: int = 2000
    standard_triplets: int = 10000
    structural_fraction: float = 0.192
    split_ratio: float = 0.8
    eval_queries: int = 400
    eval_distractors: int = 1600
    families: str = "negation,binding,spatial"
    # stage 1
    k: int = 100
    threshold_tau: float | None = None
    # training
    regime: str = "A"
    verifier: str = "f4"
    steps: int = 1500
    batch_size: int = 64
    verifier_steps: int = 400
    verifier_batch: int = 8
    lr_encoder: float = 0.05
    lr_encoder_e2e: float = 0.01
    lr_verifier: float = 3e-3
    temperature: float = 0.1
    weight_decay: float = 0.01
    warmup_ratio: float = 0.1
    # verifier architecture (pipeline-scale; sentences are short)
    pad_side: int = 16
    patch_side: int = 4
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn: int = 128
    # geometry testbed
    g_concepts: int = 16
    g_dim: int = 32
    g_instances: int = 200
    noise_angle: float = 0.05
    grid_step: float = 0.001

    def tokenizer(self) -> enc.TokenizerConfig:
        return enc.TokenizerConfig(
            lowercase=self.lowercase, vocab_buckets=self.vocab_buckets, max_len=self.max_len
        )

    def seed_list(self) -> list[int]:
        return [int(s) for s in str(self.seeds).split(",") if s.strip()]

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_sources(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from a config file plus flag overrides.

    Raises:
        UnknownConfigKey: any key that is not a RunConfig field.
    """
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if key not in known:
                raise UnknownConfigKey(key)
            if value is not None:
                merged[key] = value
    return RunConfig(**merged)


def worker_count() -> int:
    cap = os.environ.get("COMPOSE_VERIFY_THREADS")
    default = min(4, os.cpu_count() or 1)
    if cap is None:
        return default
    return max(1, min(default, int(cap)))


# --------------------------------------------------------------- embeddings


def token_matrices(
    records: list[CorpusRecord], params: enc.EncoderParams, tok: enc.TokenizerConfig
) -> dict[str, np.ndarray]:
    return {
        r.id: enc.encode_tokens(enc.tokenize(r.text, tok), params) for r in records
    }


def pooled_keys(
    records: list[CorpusRecord], params: enc.EncoderParams, tok: enc.TokenizerConfig
) -> list[tuple[str, np.ndarray]]:
    return [(r.id, enc.encode_pooled(r.text, params, tok)) for r in records]


def stage1_run(
    corpus: list[CorpusRecord],
    queries: list[CorpusRecord],
    params: enc.EncoderParams,
    tok: enc.TokenizerConfig,
    k: int,
) -> dict[str, list[tuple[str, float]]]:
    idx = index.build_index(pooled_keys(corpus, params, tok))
    cfg = index.SearchConfig(k=k)
    run = {}
    for q in queries:
        key = enc.encode_pooled(q.text, params, tok)
        run[q.id] = index.top_k(idx, key, cfg)
    return run


def retrieval_metrics(
    params: enc.EncoderParams,
    corpus: list[CorpusRecord],
    queries: list[CorpusRecord],
    qrels: dict[str, dict[str, int]],
    tok: enc.TokenizerConfig,
    k: int,
) -> tuple[float, float, dict]:
    run = stage1_run(corpus, queries, params, tok, k)
    return evalkit.ndcg_at_k(run, qrels, 10), evalkit.acc_at_1(run, qrels), run


# ------------------------------------------------------------- text scorers


class PooledCosineTextScorer:
    """score_pairs over texts via pooled keys; exact 1.0 on identical keys."""

    def __init__(self, params: enc.EncoderParams, tok: enc.TokenizerConfig):
        self.params = params
        self.tok = tok
        self._memo: dict[str, np.ndarray] = {}

    def key(self, text: str) -> np.ndarray:
        if text not in self._memo:
            self._memo[text] = enc.encode_pooled(text, self.params, self.tok)
        return self._memo[text]

    def score_pairs(self, pairs: list[tuple[str, str]]) -> np.ndarray:
        return np.asarray([cosine(self.key(a), self.key(b)) for a, b in pairs])


class VerifierTextScorer:
    """score_pairs over texts via SimMaps and a verifier; batches f3/f4."""

    def __init__(self, kind, vparams, params: enc.EncoderParams, tok: enc.TokenizerConfig):
        self.kind = kind
        self.vparams = vparams
        self.params = params
        self.tok = tok
        self._memo: dict[str, np.ndarray] = {}

    def matrix(self, text: str) -> np.ndarray:
        if text not in self._memo:
            self._memo[text] = enc.encode_tokens(enc.tokenize(text, self.tok), self.params)
        return self._memo[text]

    def score_pairs(self, pairs: list[tuple[str, str]]) -> np.ndarray:
        raw = [simmap.build_sim_map(self.matrix(a), self.matrix(b)) for a, b in pairs]
        if self.kind in ("f3", "f4"):
            side = self.vparams.pad_side
            out = np.empty(len(raw))
            chunk = 256
            for at in range(0, len(raw), chunk):
                batch = np.stack(
                    [simmap.pad_to_square(simmap.phi(m), side) for m in raw[at : at + chunk]]
                )
                if self.kind == "f3":
                    scores, _ = verifiers.f3_forward_batch(batch, self.vparams)
                else:
                    scores, _ = verifiers.f4_forward_batch(batch, self.vparams)
                out[at : at + len(batch)] = scores
            return out
        return np.asarray(
            [verifiers.score_map(self.kind, m, self.vparams) for m in raw]
        )


def rerank_run(
    run: dict,
    kind: str,
    vparams,
    embeddings: dict[str, np.ndarray],
    k: int | None = None,
) -> dict:
    """Parallel-across-queries rerank with a deterministic ordered merge."""
    scorer = (
        evalkit.CosinePairScorer()
        if kind == "cosine"
        else evalkit.VerifierPairScorer(kind, vparams)
    )
    qids = list(run)
    workers = worker_count()

    def one(qid):
        return evalkit.rerank({qid: run[qid]}, scorer, embeddings, k)[qid]

    if workers <= 1:
        return {qid: one(qid) for qid in qids}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one, qids))
    return dict(zip(qids, results))


# ------------------------------------------------------------ experiments


def build_datasets(cfg: RunConfig, seed: int) -> dict:
    """All corpora and triplet sets for one seed."""
    world = datagen.build_world(seed, "train")
    heldout_world = datagen.build_world(seed, "heldout")
    standard = datagen.gen_standard_triplets(world, cfg.standard_triplets)
    pairs = datagen.gen_pairs(world, cfg.pairs_per_family)
    pairs_train, pairs_held = datagen.split_pairs(pairs, cfg.split_ratio, seed)
    structural = datagen.make_structural_triplets(pairs_train)
    mixed = datagen.mix_datasets(standard, structural, cfg.structural_fraction, seed)
    corpus_in, queries_in, qrels_in = datagen.gen_retrieval_eval(
        world, cfg.eval_queries, cfg.eval_distractors, skip=cfg.standard_triplets
    )
    corpus_ood, queries_ood, qrels_ood = datagen.gen_retrieval_eval(
        heldout_world, cfg.eval_queries, cfg.eval_distractors
    )
    return {
        "world": world,
        "heldout_world": heldout_world,
        "standard": standard,
        "pairs_train": pairs_train,
        "pairs_heldout": pairs_held,
        "structural": structural,
        "mixed": mixed,
        "indomain": (corpus_in, queries_in, qrels_in),
        "ood": (corpus_ood, queries_ood, qrels_ood),
    }


def train_model(cfg: RunConfig, data: dict, seed: int, regime: str) -> enc.EncoderParams:
    """Model A on standard triplets or Model B on the structural mixture."""
    triplets = data["standard"] if regime == "A" else data["mixed"]
    tcfg = train.TrainConfig(
        regime="encoder_A" if regime == "A" else "encoder_B",
        temperature=cfg.temperature,
        lr_encoder=cfg.lr_encoder,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        steps=cfg.steps,
        seed=seed,
        warmup_ratio=cfg.warmup_ratio,
    )
    init = enc.init_encoder_params(
        dim=cfg.dim, vocab_buckets=cfg.vocab_buckets, seed=seed
    )
    params, _log = train.train_encoder(triplets, tcfg, cfg.tokenizer(), init_params=init)
    return params


def nearmiss_family_means(
    params: enc.EncoderParams, pairs, tok: enc.TokenizerConfig
) -> dict:
    scorer = PooledCosineTextScorer(params, tok)
    report = evalkit.nearmiss_eval(pairs, scorer, scorer_note="pooled cosine")
    return {fam: fs.mean for fam, fs in report.families.items()}


def run_tension(cfg: RunConfig) -> dict:
    """Model A vs Model B across seeds: OOD retrieval and pooled cosines."""
    tok = cfg.tokenizer()
    per_seed = {}
    for seed in cfg.seed_list():
        data = build_datasets(cfg, seed)
        corpus, queries, qrels = data["ood"]
        entry = {}
        for regime in ("A", "B"):
            params = train_model(cfg, data, seed, regime)
            ndcg, acc, _run = retrieval_metrics(params, corpus, queries, qrels, tok, cfg.k)
            means = nearmiss_family_means(params, data["pairs_heldout"], tok)
            entry[regime] = {
                "ndcg10": ndcg,
                "acc1": acc,
                "nearmiss_cosine_means": means,
            }
        per_seed[str(seed)] = entry
    summary = {"per_seed": per_seed, "aggregate": _aggregate_tension(per_seed)}
    return summary


def _aggregate_tension(per_seed: dict) -> dict:
    out = {}
    for regime in ("A", "B"):
        ndcgs = [per_seed[s][regime]["ndcg10"] for s in sorted(per_seed)]
        accs = [per_seed[s][regime]["acc1"] for s in sorted(per_seed)]
        fams: dict[str, list[float]] = {}
        for s in sorted(per_seed):
            for fam, val in per_seed[s][regime]["nearmiss_cosine_means"].items():
                fams.setdefault(fam, []).append(val)
        out[regime] = {
            "ndcg10_mean": _mean(ndcgs),
            "ndcg10_std": _std(ndcgs),
            "acc1_mean": _mean(accs),
            "acc1_std": _std(accs),
            "nearmiss_cosine_means": {fam: _mean(v) for fam, v in fams.items()},
        }
    return out


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values)


def _std(values: list[float]) -> float:
    mu = _mean(values)
    return math.sqrt(math.fsum((v - mu) ** 2 for v in values) / len(values))


def _verifier_train_cfg(cfg: RunConfig, seed: int, regime: str) -> train.TrainConfig:
    return train.TrainConfig(
        regime=regime,
        temperature=cfg.temperature,
        lr_encoder=cfg.lr_encoder_e2e,
        lr_verifier=cfg.lr_verifier,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.verifier_batch,
        steps=cfg.verifier_steps,
        seed=seed,
        warmup_ratio=cfg.warmup_ratio,
    )


def init_verifier(cfg: RunConfig, kind: str, seed: int):
    if kind == "f3":
        return verifiers.init_cnn_params(seed=seed, pad_side=cfg.pad_side)
    if kind == "f4":
        return verifiers.init_transformer_params(
            seed=seed,
            pad_side=cfg.pad_side,
            patch_side=cfg.patch_side,
            d_model=cfg.d_model,
            n_heads=cfg.n_heads,
            n_layers=cfg.n_layers,
            ffn=cfg.ffn,
        )
    return None


def run_verifier_grid(cfg: RunConfig, data: dict, base_encoder: enc.EncoderParams) -> dict:
    """Frozen and end-to-end verifier comparison at one seed.

    Stage-1 candidates always come from the base (Model A) encoder's pooled
    keys; only the stage-2 scorer varies.
    """
    tok = cfg.tokenizer()
    seed = cfg.seed
    corpus, queries, qrels = data["ood"]
    pairs_held = data["pairs_heldout"]
    run1 = stage1_run(corpus, queries, base_encoder, tok, cfg.k)
    base_embeddings = token_matrices(corpus + queries, base_encoder, tok)

    report: dict = {
        "stage1": {
            "ndcg10": evalkit.ndcg_at_k(run1, qrels, 10),
            "acc1": evalkit.acc_at_1(run1, qrels),
        },
        "frozen": {},
        "end_to_end": {},
    }

    def evaluate(kind, vparams, encoder_params, bucket, label):
        embeddings = (
            base_embeddings
            if encoder_params is base_encoder
            else token_matrices(corpus + queries, encoder_params, tok)
        )
        reranked = rerank_run(run1, kind, vparams, embeddings, cfg.k)
        near = evalkit.nearmiss_eval(
            pairs_held,
            VerifierTextScorer(kind, vparams, encoder_params, tok),
            scorer_note=label,
        )
        bucket[kind] = {
            "rerank_ndcg10": evalkit.ndcg_at_k(reranked, qrels, 10),
            "rerank_acc1": evalkit.acc_at_1(reranked, qrels),
            "nearmiss": near.to_json_dict(),
        }

    # frozen, parameter-free / default-config verifiers
    evaluate("f0", None, base_encoder, report["frozen"], "frozen f0")
    evaluate("f1", None, base_encoder, report["frozen"], "frozen f1")
    evaluate("f2", verifiers.AlignmentConfig(), base_encoder, report["frozen"], "frozen f2")

    # frozen, learned verifiers trained on the structural mixture
    for kind in ("f3", "f4"):
        vparams, _log = train.train_verifier(
            kind,
            data["mixed"],
            _verifier_train_cfg(cfg, seed, "verifier_frozen"),
            base_encoder,
            tok,
            init_params=init_verifier(cfg, kind, seed),
        )
        evaluate(kind, vparams, base_encoder, report["frozen"], f"frozen {kind}")

    # end-to-end: joint training from the base encoder
    for kind in ("f3", "f4"):
        e_params, vparams, _log = train.train_end_to_end(
            kind,
            data["mixed"],
            _verifier_train_cfg(cfg, seed, "end_to_end"),
            base_encoder,
            tok,
            init_params=init_verifier(cfg, kind, seed),
        )
        evaluate(kind, vparams, e_params, report["end_to_end"], f"end-to-end {kind}")
    return report


def reproduce(cfg: RunConfig) -> dict:
    """Full protocol: A/B tension across seeds plus the verifier grid."""
    tension = run_tension(cfg)
    data = build_datasets(cfg, cfg.seed)
    base = train_model(cfg, data, cfg.seed, "A")
    grid = run_verifier_grid(cfg, data, base)
    return {
        "config": cfg.to_dict(),
        "tension": tension,
        "verifier_grid": grid,
        "note": (
            "synthetic desk-scale reproduction; directional comparisons only, "
            "cross-seed mean/std replaces the paper's cross-dataset averaging"
        ),
    }

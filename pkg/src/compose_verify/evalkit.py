"""Evaluation: ranking metrics, verifier reranking, near-miss scoring, and
cosine histograms.

A run is ``dict[qid, list[(docid, score)]]`` with scores non-increasing.
Means are computed with correctly-rounded sums over sorted query ids so
reports are byte-stable across dict orderings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingEmbedding, NoJudgedQueries
from .datagen import PairRecord

HISTOGRAM_BINS = 50


def _judged(qrels: dict[str, dict[str, int]], qid: str) -> bool:
    grades = qrels.get(qid)
    return bool(grades) and any(g >= 1 for g in grades.values())


def ndcg_at_k(
    run: dict[str, list[tuple[str, float]]],
    qrels: dict[str, dict[str, int]],
    k: int = 10,
) -> float:
    """Mean nDCG@k with gain 2^grade - 1 and log2(rank+1) discounts.

    Queries with no relevant judgments are excluded from the mean.

    Raises:
        NoJudgedQueries: nothing to average.
    """
    per_query = []
    for qid in sorted(run):
        if not _judged(qrels, qid):
            continue
        grades = qrels[qid]
        dcg = 0.0
        for rank, (docid, _score) in enumerate(run[qid][:k], start=1):
            grade = grades.get(docid, 0)
            if grade > 0:
                dcg += (2.0**grade - 1.0) / math.log2(rank + 1)
        ideal = sorted(grades.values(), reverse=True)[:k]
        idcg = sum(
            (2.0**g - 1.0) / math.log2(r + 1) for r, g in enumerate(ideal, start=1) if g > 0
        )
        per_query.append(dcg / idcg)
    if not per_query:
        raise NoJudgedQueries("no query in the run has relevant judgments")
    return math.fsum(per_query) / len(per_query)


def acc_at_1(
    run: dict[str, list[tuple[str, float]]], qrels: dict[str, dict[str, int]]
) -> float:
    """Fraction of judged queries whose rank-1 document has grade >= 1."""
    hits = []
    for qid in sorted(run):
        if not _judged(qrels, qid):
            continue
        ranked = run[qid]
        top_grade = qrels[qid].get(ranked[0][0], 0) if ranked else 0
        hits.append(1.0 if top_grade >= 1 else 0.0)
    if not hits:
        raise NoJudgedQueries("no query in the run has relevant judgments")
    return math.fsum(hits) / len(hits)


# ------------------------------------------------------------------ rerank


def rerank(
    run: dict[str, list[tuple[str, float]]],
    pair_scorer,
    embeddings: dict[str, np.ndarray],
    k: int | None = None,
) -> dict[str, list[tuple[str, float]]]:
    """Rescore each query's top candidates and re-sort (stable on ties).

    ``pair_scorer.scores(query_matrix, candidate_matrices)`` returns one score
    per candidate. Candidates beyond ``k`` keep their original order behind
    the rescored head. The output is a permutation of the input run.

    Raises:
        MissingEmbedding: a query or candidate id has no stored embeddings.
    """
    out: dict[str, list[tuple[str, float]]] = {}
    for qid in run:
        candidates = run[qid]
        head = candidates if k is None else candidates[:k]
        tail = [] if k is None else candidates[k:]
        if qid not in embeddings:
            raise MissingEmbedding(f"query {qid!r}")
        q_mat = embeddings[qid]
        mats = []
        for docid, _ in head:
            if docid not in embeddings:
                raise MissingEmbedding(f"document {docid!r}")
            mats.append(embeddings[docid])
        scores = pair_scorer.scores(q_mat, mats)
        order = sorted(range(len(head)), key=lambda i: (-scores[i], i))
        out[qid] = [(head[i][0], float(scores[i])) for i in order] + tail
    return out


# --------------------------------------------------------------- near-miss


def auc_scores(positive: np.ndarray, negative: np.ndarray) -> float:
    """P(positive > negative) with ties counted half, by midrank statistics."""
    pos = np.asarray(positive, dtype=np.float64)
    neg = np.asarray(negative, dtype=np.float64)
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = float(ranks[: len(pos)].sum())
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return u / (len(pos) * len(neg))


@dataclass(frozen=True)
class FamilyScore:
    mean: float
    std: float
    count: int
    auc_vs_paraphrase: float | None


@dataclass(frozen=True)
class NearMissReport:
    families: dict[str, FamilyScore]
    paraphrase_mean: float | None
    paraphrase_count: int
    overall_auc: float | None
    scorer_note: str = ""

    def to_json_dict(self) -> dict:
        return {
            "families": {
                fam: {
                    "mean": fs.mean,
                    "std": fs.std,
                    "count": fs.count,
                    "auc_vs_paraphrase": fs.auc_vs_paraphrase,
                }
                for fam, fs in self.families.items()
            },
            "paraphrase_mean": self.paraphrase_mean,
            "paraphrase_count": self.paraphrase_count,
            "overall_auc": self.overall_auc,
            "scorer_note": self.scorer_note,
        }


def nearmiss_eval(pairs: list[PairRecord], scorer, scorer_note: str = "") -> NearMissReport:
    """Score every pair and aggregate per family.

    ``scorer`` is ``scorer(s1, s2) -> float``, or an object with
    ``score_pairs(list[(s1, s2)]) -> array`` for batched scoring. AUC treats
    paraphrases as the positive class (they should score higher); it is
    omitted when no paraphrase pairs are present.
    """
    if not pairs:
        raise ValueError("need at least one pair")
    texts = [(p.s1, p.s2) for p in pairs]
    if hasattr(scorer, "score_pairs"):
        values = np.asarray(scorer.score_pairs(texts), dtype=np.float64)
    else:
        values = np.asarray([scorer(s1, s2) for s1, s2 in texts], dtype=np.float64)

    by_family: dict[str, list[float]] = {}
    for pair, value in zip(pairs, values):
        by_family.setdefault(pair.family, []).append(float(value))

    para = np.asarray(by_family.pop("paraphrase", []), dtype=np.float64)
    families: dict[str, FamilyScore] = {}
    near_all: list[float] = []
    for family in sorted(by_family):
        scores = np.asarray(by_family[family])
        near_all.extend(by_family[family])
        families[family] = FamilyScore(
            mean=float(scores.mean()),
            std=float(scores.std()),
            count=len(scores),
            auc_vs_paraphrase=(
                auc_scores(para, scores) if para.size else None
            ),
        )
    overall = (
        auc_scores(para, np.asarray(near_all)) if para.size and near_all else None
    )
    return NearMissReport(
        families=families,
        paraphrase_mean=float(para.mean()) if para.size else None,
        paraphrase_count=int(para.size),
        overall_auc=overall,
        scorer_note=scorer_note,
    )


# --------------------------------------------------------------- histograms


def cosine_histogram(
    pairs: list[PairRecord], encode_key
) -> dict[str, np.ndarray]:
    """Per-family histogram of pair cosines over 50 uniform bins on [-1, 1].

    ``encode_key(text) -> unit key``; returns family -> length-50 counts.
    """
    from .embstore import cosine

    if not pairs:
        raise ValueError("need at least one pair")
    edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
    by_family: dict[str, list[float]] = {}
    for p in pairs:
        by_family.setdefault(p.family, []).append(cosine(encode_key(p.s1), encode_key(p.s2)))
    return {
        family: np.histogram(np.asarray(vals), bins=edges)[0]
        for family, vals in sorted(by_family.items())
    }


def write_histogram_csv(hist: dict[str, np.ndarray], path) -> None:
    edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("family,bin_low,bin_high,count\n")
        for family in sorted(hist):
            for i, count in enumerate(hist[family]):
                fh.write(f"{family},{edges[i]:.2f},{edges[i + 1]:.2f},{int(count)}\n")


def write_report_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


# --------------------------------------------------------------- pair scorers


class CosinePairScorer:
    """Stage-1 consistency scorer: cosine of mean-pooled unit keys."""

    def scores(self, q_mat: np.ndarray, cand_mats: list[np.ndarray]) -> np.ndarray:
        from .embstore import cosine, pool_mean

        q_key = pool_mean(q_mat)
        return np.asarray([cosine(q_key, pool_mean(c)) for c in cand_mats])


class VerifierPairScorer:
    """Scores SimMaps with a verifier; batches learned kinds per query."""

    def __init__(self, kind: str, params=None):
        self.kind = kind
        self.params = params

    def scores(self, q_mat: np.ndarray, cand_mats: list[np.ndarray]) -> np.ndarray:
        from . import simmap, verifiers

        if self.kind in ("f3", "f4"):
            side = self.params.pad_side
            batch = np.stack(
                [
                    simmap.pad_to_square(simmap.phi(simmap.build_sim_map(q_mat, c)), side)
                    for c in cand_mats
                ]
            )
            if self.kind == "f3":
                out, _ = verifiers.f3_forward_batch(batch, self.params)
            else:
                out, _ = verifiers.f4_forward_batch(batch, self.params)
            return out
        return np.asarray(
            [
                verifiers.score_map(self.kind, simmap.build_sim_map(q_mat, c), self.params)
                for c in cand_mats
            ]
        )

"""Contrastive training: encoder-only (Model A/B), frozen-verifier, and
end-to-end regimes, all driven by in-batch softmax cross-entropy (MNRL) with
each triplet's hard negative appended as an extra score column.

Training is step-budgeted and fully deterministic given the seed: batches are
drawn by a seeded per-epoch shuffle, and the frozen and end-to-end paths share
one batch stream so that an end-to-end run with encoder lr 0 reproduces the
frozen run exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import nn, simmap, verifiers
from .embstore import Triplet
from .errors import DataEmpty, NonLearnableKind

REGIMES = ("encoder_A", "encoder_B", "verifier_frozen", "end_to_end")


@dataclass
class TrainConfig:
    regime: str = "encoder_A"
    temperature: float = 0.1
    lr_encoder: float | None = None  # resolved: 2e-5 encoder-only, 1e-5 end-to-end
    lr_verifier: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 64
    steps: int = 2000
    seed: int = 42
    warmup_ratio: float = 0.1
    eval_every: int = 0
    patience: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")

    def resolved_lr_encoder(self) -> float:
        if self.lr_encoder is not None:
            return self.lr_encoder
        return 1e-5 if self.regime == "end_to_end" else 2e-5


@dataclass
class TrainLog:
    config: dict
    entries: list[dict] = field(default_factory=list)

    def add(self, **entry) -> None:
        self.entries.append(entry)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"config": self.config}, sort_keys=True))
            fh.write("\n")
            for entry in self.entries:
                fh.write(json.dumps(entry, sort_keys=True))
                fh.write("\n")


def mnrl_loss(scores: np.ndarray, temperature: float):
    """In-batch softmax cross-entropy; row i's positive is column i.

    Returns (loss, gradient w.r.t. scores), computed with a stable
    log-sum-exp.
    """
    scores = np.asarray(scores, dtype=np.float64)
    b, cols = scores.shape
    if cols < b or (b < 2 and cols == b):
        raise ValueError("need B >= 2 or explicit hard-negative columns")
    z = scores / temperature
    z_max = z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z - z_max).sum(axis=1, keepdims=True)) + z_max
    log_probs = z - log_norm
    loss = -math.fsum(log_probs[i, i] for i in range(b)) / b
    grad = np.exp(log_probs)
    grad[np.arange(b), np.arange(b)] -= 1.0
    grad /= b * temperature
    return float(loss), grad


def batch_stream(n_items: int, batch_size: int, steps: int, seed: int):
    """Seeded per-epoch shuffles cut into full batches; drops ragged tails."""
    rng = np.random.default_rng([seed, 61])
    produced = 0
    while produced < steps:
        order = rng.permutation(n_items)
        for start in range(0, n_items - batch_size + 1, batch_size):
            yield order[start : start + batch_size]
            produced += 1
            if produced == steps:
                return
        if n_items < batch_size:
            raise DataEmpty(f"{n_items} items cannot fill a batch of {batch_size}")


def _check_early_stop(log, eval_fn, params, step, cfg, best):
    metrics = eval_fn(params)
    log.add(step=step, loss=None, **metrics)
    score = metrics.get("ndcg10", 0.0)
    if best["score"] is None or score > best["score"]:
        best["score"] = score
        best["step"] = step
    return cfg.patience > 0 and step - best["step"] >= cfg.patience


# ------------------------------------------------------------ encoder-only


def train_encoder(
    triplets: list[Triplet],
    cfg: TrainConfig,
    tok_cfg: enc.TokenizerConfig = enc.TokenizerConfig(),
    init_params: enc.EncoderParams | None = None,
    eval_fn=None,
) -> tuple[enc.EncoderParams, TrainLog]:
    """Model A / Model B training: pooled-cosine scores into MNRL.

    Raises:
        DataEmpty: no triplets.
    """
    if not triplets:
        raise DataEmpty("no training triplets")
    if cfg.regime not in ("encoder_A", "encoder_B"):
        raise ValueError(f"train_encoder got regime {cfg.regime!r}")
    params = (
        init_params.copy()
        if init_params is not None
        else enc.init_encoder_params(seed=cfg.seed, vocab_buckets=tok_cfg.vocab_buckets)
    )
    optimizer = nn.AdamW(
        params.tensors(),
        lr=cfg.resolved_lr_encoder(),
        weight_decay=cfg.weight_decay,
        total_steps=cfg.steps,
        warmup_ratio=cfg.warmup_ratio,
    )
    log = TrainLog(config=_config_dict(cfg, kind=None))
    token_memo: dict[str, list[int]] = {}

    def ids_of(text: str) -> list[int]:
        if text not in token_memo:
            token_memo[text] = enc.tokenize(text, tok_cfg)
        return token_memo[text]

    best = {"score": None, "step": 0}
    for step, batch_idx in enumerate(
        batch_stream(len(triplets), cfg.batch_size, cfg.steps, cfg.seed), start=1
    ):
        batch = [triplets[int(i)] for i in batch_idx]
        encoded: dict[str, tuple] = {}
        for t in batch:
            for text in (t.anchor, t.positive, t.negative):
                if text not in encoded:
                    encoded[text] = enc.encode_pooled_with_cache(ids_of(text), params)
        anchors = np.stack([encoded[t.anchor][0] for t in batch])
        cands = np.stack(
            [encoded[t.positive][0] for t in batch]
            + [encoded[t.negative][0] for t in batch]
        )
        scores = anchors @ cands.T
        loss, dscores = mnrl_loss(scores, cfg.temperature)

        danchors = dscores @ cands
        dcands = dscores.T @ anchors
        upstream: dict[str, np.ndarray] = {}
        for i, t in enumerate(batch):
            upstream[t.anchor] = upstream.get(t.anchor, 0.0) + danchors[i]
            upstream[t.positive] = upstream.get(t.positive, 0.0) + dcands[i]
            upstream[t.negative] = upstream.get(t.negative, 0.0) + dcands[len(batch) + i]
        acc = enc.GradAccumulator(params)
        for text, dkey in upstream.items():
            acc.add(*enc.pooled_backward(dkey, encoded[text][1], params))
        optimizer.step(acc.grads())

        if step % max(1, cfg.steps // 20) == 0 or step == cfg.steps:
            log.add(step=step, loss=loss)
        if eval_fn is not None and cfg.eval_every and step % cfg.eval_every == 0:
            if _check_early_stop(log, eval_fn, params, step, cfg, best):
                break
    return params, log


# --------------------------------------------------------- verifier training


def _matrices_for(texts, params, tok_cfg, memo):
    for text in texts:
        if text not in memo:
            memo[text] = enc.encode_tokens(enc.tokenize(text, tok_cfg), params)
    return [memo[t] for t in texts]


def _phi_padded(raw_maps: list[np.ndarray], side: int) -> np.ndarray:
    return np.stack([simmap.pad_to_square(simmap.phi(m), side) for m in raw_maps])


def train_verifier(
    kind: str,
    triplets: list[Triplet],
    cfg: TrainConfig,
    encoder_params: enc.EncoderParams,
    tok_cfg: enc.TokenizerConfig = enc.TokenizerConfig(),
    init_params=None,
    eval_fn=None,
):
    """Frozen regime: encoder fixed, verifier parameters trained.

    Raises:
        NonLearnableKind: for f0/f1.
        DataEmpty: no triplets.
    """
    if kind in ("f0", "f1"):
        raise NonLearnableKind(f"{kind} has no parameters")
    if kind not in ("f2", "f3", "f4"):
        raise ValueError(f"unknown verifier kind {kind!r}")
    if not triplets:
        raise DataEmpty("no training triplets")

    if init_params is not None:
        params = init_params.copy() if hasattr(init_params, "copy") else init_params
    elif kind == "f3":
        params = verifiers.init_cnn_params(seed=cfg.seed)
    elif kind == "f4":
        params = verifiers.init_transformer_params(seed=cfg.seed)
    else:
        params = verifiers.AlignmentConfig()

    log = TrainLog(config=_config_dict(cfg, kind=kind))
    matrix_memo: dict[str, np.ndarray] = {}
    best = {"score": None, "step": 0}

    if kind == "f2":
        state = {"lam": np.array(params.lam), "tau_align": np.array(params.tau_align)}
        optimizer = nn.AdamW(
            state, lr=cfg.lr_verifier, weight_decay=0.0,
            total_steps=cfg.steps, warmup_ratio=cfg.warmup_ratio,
        )
    else:
        optimizer = nn.AdamW(
            params.tensors, lr=cfg.lr_verifier, weight_decay=cfg.weight_decay,
            total_steps=cfg.steps, warmup_ratio=cfg.warmup_ratio,
        )

    for step, batch_idx in enumerate(
        batch_stream(len(triplets), cfg.batch_size, cfg.steps, cfg.seed), start=1
    ):
        batch = [triplets[int(i)] for i in batch_idx]
        a_mats = _matrices_for([t.anchor for t in batch], encoder_params, tok_cfg, matrix_memo)
        c_mats = _matrices_for(
            [t.positive for t in batch] + [t.negative for t in batch],
            encoder_params, tok_cfg, matrix_memo,
        )
        raw_maps = [simmap.build_sim_map(a, c) for a in a_mats for c in c_mats]
        b, n_cands = len(batch), len(c_mats)

        if kind == "f2":
            align = verifiers.AlignmentConfig(
                lam=float(state["lam"]), tau_align=float(state["tau_align"])
            )
            flat = np.asarray([verifiers.f2(m, align) for m in raw_maps])
            loss, dscores = mnrl_loss(flat.reshape(b, n_cands), cfg.temperature)
            dflat = dscores.reshape(-1)
            dlam = dtau = 0.0
            for weight, m in zip(dflat, raw_maps):
                if weight == 0.0:
                    continue
                _, dl, dt = verifiers.f2_backward(m, align)
                dlam += weight * dl
                dtau += weight * dt
            optimizer.step({"lam": np.array(dlam), "tau_align": np.array(dtau)})
            # alignment temperature must stay positive
            state["tau_align"] = np.maximum(state["tau_align"], 1e-3)
            params = verifiers.AlignmentConfig(
                lam=max(0.0, float(state["lam"])), tau_align=float(state["tau_align"])
            )
        else:
            maps01 = _phi_padded(raw_maps, params.pad_side)
            if kind == "f3":
                flat, cache = verifiers.f3_forward_batch(maps01, params)
            else:
                flat, cache = verifiers.f4_forward_batch(maps01, params)
            loss, dscores = mnrl_loss(flat.reshape(b, n_cands), cfg.temperature)
            if kind == "f3":
                grads, _ = verifiers.f3_backward_batch(dscores.reshape(-1), cache)
            else:
                grads, _ = verifiers.f4_backward_batch(dscores.reshape(-1), cache)
            optimizer.step(grads)

        if step % max(1, cfg.steps // 20) == 0 or step == cfg.steps:
            log.add(step=step, loss=loss)
        if eval_fn is not None and cfg.eval_every and step % cfg.eval_every == 0:
            if _check_early_stop(log, eval_fn, params, step, cfg, best):
                break
    return params, log


def train_end_to_end(
    kind: str,
    triplets: list[Triplet],
    cfg: TrainConfig,
    encoder_params: enc.EncoderParams,
    tok_cfg: enc.TokenizerConfig = enc.TokenizerConfig(),
    init_params=None,
    eval_fn=None,
):
    """Joint regime: gradient flows verifier -> map -> token embeddings.

    Returns (encoder params, verifier params, log).
    """
    if kind not in ("f3", "f4"):
        raise ValueError("end-to-end training supports f3/f4 only")
    if not triplets:
        raise DataEmpty("no training triplets")

    e_params = encoder_params.copy()
    if init_params is not None:
        v_params = init_params.copy()
    elif kind == "f3":
        v_params = verifiers.init_cnn_params(seed=cfg.seed)
    else:
        v_params = verifiers.init_transformer_params(seed=cfg.seed)

    enc_opt = nn.AdamW(
        e_params.tensors(), lr=cfg.resolved_lr_encoder(), weight_decay=cfg.weight_decay,
        total_steps=cfg.steps, warmup_ratio=cfg.warmup_ratio,
    )
    ver_opt = nn.AdamW(
        v_params.tensors, lr=cfg.lr_verifier, weight_decay=cfg.weight_decay,
        total_steps=cfg.steps, warmup_ratio=cfg.warmup_ratio,
    )
    log = TrainLog(config=_config_dict(cfg, kind=kind))
    token_memo: dict[str, list[int]] = {}

    def ids_of(text: str) -> list[int]:
        if text not in token_memo:
            token_memo[text] = enc.tokenize(text, tok_cfg)
        return token_memo[text]

    side = v_params.pad_side
    best = {"score": None, "step": 0}
    for step, batch_idx in enumerate(
        batch_stream(len(triplets), cfg.batch_size, cfg.steps, cfg.seed), start=1
    ):
        batch = [triplets[int(i)] for i in batch_idx]
        encoded: dict[str, tuple] = {}
        for t in batch:
            for text in (t.anchor, t.positive, t.negative):
                if text not in encoded:
                    encoded[text] = enc.encode_matrix_with_cache(ids_of(text), e_params)
        anchor_texts = [t.anchor for t in batch]
        cand_texts = [t.positive for t in batch] + [t.negative for t in batch]
        raw_maps = [
            simmap.build_sim_map(encoded[a][0], encoded[c][0])
            for a in anchor_texts
            for c in cand_texts
        ]
        maps01 = _phi_padded(raw_maps, side)
        if kind == "f3":
            flat, cache = verifiers.f3_forward_batch(maps01, v_params)
        else:
            flat, cache = verifiers.f4_forward_batch(maps01, v_params)
        loss, dscores = mnrl_loss(flat.reshape(len(batch), len(cand_texts)), cfg.temperature)
        if kind == "f3":
            v_grads, dmaps01 = verifiers.f3_backward_batch(
                dscores.reshape(-1), cache, need_input_grad=True
            )
        else:
            v_grads, dmaps01 = verifiers.f4_backward_batch(
                dscores.reshape(-1), cache, need_input_grad=True
            )

        # map gradient -> token matrices; phi contributes 1/2 inside the clip
        dmat: dict[str, np.ndarray] = {}
        pair = 0
        for a in anchor_texts:
            a_rows = encoded[a][0]
            for c in cand_texts:
                c_rows = encoded[c][0]
                m_rows, n_cols = min(a_rows.shape[0], side), min(c_rows.shape[0], side)
                raw = raw_maps[pair][:m_rows, :n_cols]
                dm01 = dmaps01[pair][:m_rows, :n_cols]
                dm_raw = dm01 * 0.5 * (np.abs(raw) <= 1.0)
                if np.any(dm_raw):
                    da = dm_raw @ c_rows[:n_cols]
                    dc = dm_raw.T @ a_rows[:m_rows]
                    if a in dmat:
                        dmat[a][:m_rows] += da
                    else:
                        buf = np.zeros_like(a_rows)
                        buf[:m_rows] = da
                        dmat[a] = buf
                    if c in dmat:
                        dmat[c][:n_cols] += dc
                    else:
                        buf = np.zeros_like(c_rows)
                        buf[:n_cols] = dc
                        dmat[c] = buf
                pair += 1
        acc = enc.GradAccumulator(e_params)
        for text, grad in dmat.items():
            acc.add(*enc.matrix_backward(grad, encoded[text][1], e_params))
        ver_opt.step(v_grads)
        enc_opt.step(acc.grads())

        if step % max(1, cfg.steps // 20) == 0 or step == cfg.steps:
            log.add(step=step, loss=loss)
        if eval_fn is not None and cfg.eval_every and step % cfg.eval_every == 0:
            if _check_early_stop(log, eval_fn, (e_params, v_params), step, cfg, best):
                break
    return e_params, v_params, log


# ----------------------------------------------------------------- checks


def grad_check_mnrl(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=(4, 6))
    _, grad = mnrl_loss(scores, 0.1)
    return nn.grad_check(
        lambda: mnrl_loss(scores, 0.1)[0], {"scores": scores}, {"scores": grad},
        max_elems=24,
    )


def grad_check_encoder(seed: int = 7) -> float:
    params = enc.init_encoder_params(dim=8, vocab_buckets=24, seed=seed, with_mix=True)
    rng = np.random.default_rng(seed)
    batches = [[1, 5, 9], [5, 2, 2], [15, 0, 9]]
    weights = [rng.normal(size=8) for _ in batches]

    def loss():
        total = 0.0
        for ids, w in zip(batches, weights):
            key, _ = enc.encode_pooled_with_cache(ids, params)
            total += float(key @ w)
        return total

    acc = enc.GradAccumulator(params)
    for ids, w in zip(batches, weights):
        key, cache = enc.encode_pooled_with_cache(ids, params)
        acc.add(*enc.pooled_backward(w, cache, params))
    sparse = acc.table_grad()
    dtable = np.zeros_like(params.table)
    dtable[sparse.ids] = sparse.rows
    return nn.grad_check(
        loss, {"table": params.table, "mix": params.mix},
        {"table": dtable, "mix": acc.dmix}, max_elems=200, seed=seed,
    )


def grad_check_verifier(kind: str, seed: int = 3) -> float:
    rng = np.random.default_rng(seed)
    if kind == "f3":
        params = verifiers.init_cnn_params(seed=seed, pad_side=8)
        maps = rng.uniform(0.05, 0.95, size=(2, 8, 8))
        forward = verifiers.f3_forward_batch
        backward = verifiers.f3_backward_batch
    elif kind == "f4":
        params = verifiers.init_transformer_params(
            seed=seed, pad_side=16, patch_side=4, d_model=16, n_heads=2, n_layers=2, ffn=32
        )
        maps = rng.uniform(0.05, 0.95, size=(2, 16, 16))
        forward = verifiers.f4_forward_batch
        backward = verifiers.f4_backward_batch
    else:
        raise ValueError("grad_check_verifier supports f3/f4")
    weights = rng.normal(size=2)
    _, cache = forward(maps, params)
    grads, dmaps = backward(weights, cache, need_input_grad=True)
    tensors = dict(params.tensors)
    tensors["__input__"] = maps
    analytic = dict(grads)
    analytic["__input__"] = dmaps

    def loss():
        out, _ = forward(maps, params)
        return float(out @ weights)

    return nn.grad_check(loss, tensors, analytic, max_elems=40, seed=seed)


def _config_dict(cfg: TrainConfig, kind: str | None) -> dict:
    out = {
        "regime": cfg.regime,
        "temperature": cfg.temperature,
        "lr_encoder": cfg.resolved_lr_encoder(),
        "lr_verifier": cfg.lr_verifier,
        "weight_decay": cfg.weight_decay,
        "batch_size": cfg.batch_size,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "warmup_ratio": cfg.warmup_ratio,
    }
    if kind is not None:
        out["verifier"] = kind
    return out

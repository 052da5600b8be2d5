"""F4: tiny transformer over patches of phi-space similarity maps.

Pipeline per map: pad/truncate to ``pad_side``, cut into ``patch_side``
patches, linearly project each patch, prepend a CLS slot, add learned
positional embeddings, run pre-LN encoder layers (self-attention + FFN),
and read the score off the CLS vector through a linear head and tanh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import nn, simmap
from ..errors import ShapeMismatch


@dataclass
class TransformerParams:
    tensors: dict[str, np.ndarray]
    pad_side: int = 64
    patch_side: int = 8
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ffn: int = 128

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ShapeMismatch("head count must divide d_model")
        validate_transformer_shapes(self.tensors, self)

    @property
    def n_patches(self) -> int:
        return (self.pad_side // self.patch_side) ** 2

    def copy(self) -> "TransformerParams":
        return TransformerParams(
            tensors={k: v.copy() for k, v in self.tensors.items()},
            pad_side=self.pad_side,
            patch_side=self.patch_side,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            ffn=self.ffn,
        )


def transformer_shapes(
    pad_side=64, patch_side=8, d_model=64, n_heads=4, n_layers=2, ffn=128
) -> dict[str, tuple[int, ...]]:
    n_patches = (pad_side // patch_side) ** 2
    d = d_model
    shapes: dict[str, tuple[int, ...]] = {
        "patch_w": (patch_side**2, d),
        "patch_b": (d,),
        "pos": (n_patches + 1, d),
        "cls": (d,),
        "final_ln_g": (d,),
        "final_ln_b": (d,),
        "head_w": (d, 1),
        "head_b": (1,),
    }
    for i in range(n_layers):
        shapes[f"l{i}_ln1_g"] = (d,)
        shapes[f"l{i}_ln1_b"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[f"l{i}_w{proj}"] = (d, d)
            shapes[f"l{i}_b{proj}"] = (d,)
        shapes[f"l{i}_ln2_g"] = (d,)
        shapes[f"l{i}_ln2_b"] = (d,)
        shapes[f"l{i}_ffn1_w"] = (d, ffn)
        shapes[f"l{i}_ffn1_b"] = (ffn,)
        shapes[f"l{i}_ffn2_w"] = (ffn, d)
        shapes[f"l{i}_ffn2_b"] = (d,)
    return shapes


def validate_transformer_shapes(tensors: dict[str, np.ndarray], p: "TransformerParams") -> None:
    expected = transformer_shapes(
        p.pad_side, p.patch_side, p.d_model, p.n_heads, p.n_layers, p.ffn
    )
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeMismatch(f"missing tensor {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise ShapeMismatch(
                f"{name}: expected shape {shape}, got {tuple(tensors[name].shape)}"
            )


def init_transformer_params(
    seed: int = 42,
    pad_side: int = 64,
    patch_side: int = 8,
    d_model: int = 64,
    n_heads: int = 4,
    n_layers: int = 2,
    ffn: int = 128,
) -> TransformerParams:
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in transformer_shapes(
        pad_side, patch_side, d_model, n_heads, n_layers, ffn
    ).items():
        if name.endswith(("_b", "ln1_b", "ln2_b")) or name == "final_ln_b":
            tensors[name] = np.zeros(shape)
        elif name.endswith(("ln1_g", "ln2_g")) or name == "final_ln_g":
            tensors[name] = np.ones(shape)
        elif name in ("pos", "cls"):
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
        else:
            std = np.sqrt(2.0 / (shape[0] + shape[-1]))
            tensors[name] = rng.normal(0.0, std, size=shape)
    return TransformerParams(
        tensors=tensors,
        pad_side=pad_side,
        patch_side=patch_side,
        d_model=d_model,
        n_heads=n_heads,
        n_layers=n_layers,
        ffn=ffn,
    )


def _patchify_batch(maps01: np.ndarray, pad_side: int, patch_side: int) -> np.ndarray:
    n = maps01.shape[0]
    per = pad_side // patch_side
    blocks = maps01.reshape(n, per, patch_side, per, patch_side)
    return blocks.transpose(0, 1, 3, 2, 4).reshape(n, per * per, patch_side**2)


def _unpatchify_batch(patches: np.ndarray, pad_side: int, patch_side: int) -> np.ndarray:
    n = patches.shape[0]
    per = pad_side // patch_side
    blocks = patches.reshape(n, per, per, patch_side, patch_side)
    return blocks.transpose(0, 1, 3, 2, 4).reshape(n, pad_side, pad_side)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, t, d = x.shape
    return x.reshape(n, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    n, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, t, h * dh)


def f4_forward(m01: np.ndarray, params: TransformerParams) -> float:
    """Score one phi-space map; returns a scalar in (-1, 1)."""
    padded = simmap.pad_to_square(np.asarray(m01, dtype=np.float64), params.pad_side)
    scores, _ = f4_forward_batch(padded[None, :, :], params)
    return float(scores[0])


def f4_forward_batch(maps01: np.ndarray, params: TransformerParams):
    """Batched forward over (N, pad_side, pad_side) phi-space maps."""
    t = params.tensors
    if maps01.shape[1] != params.pad_side or maps01.shape[2] != params.pad_side:
        raise ShapeMismatch(
            f"expected (N, {params.pad_side}, {params.pad_side}) maps, got {maps01.shape}"
        )
    n = maps01.shape[0]
    patches = _patchify_batch(maps01, params.pad_side, params.patch_side)
    proj, cache_proj = nn.linear(patches, t["patch_w"], t["patch_b"])
    x = np.concatenate([np.tile(t["cls"], (n, 1, 1)), proj], axis=1)
    x = x + t["pos"]

    layer_caches = []
    scale = 1.0 / np.sqrt(params.d_model // params.n_heads)
    for i in range(params.n_layers):
        h, cache_ln1 = nn.layer_norm(x, t[f"l{i}_ln1_g"], t[f"l{i}_ln1_b"])
        q, cache_q = nn.linear(h, t[f"l{i}_wq"], t[f"l{i}_bq"])
        k, cache_k = nn.linear(h, t[f"l{i}_wk"], t[f"l{i}_bk"])
        v, cache_v = nn.linear(h, t[f"l{i}_wv"], t[f"l{i}_bv"])
        qh, kh, vh = (_split_heads(a, params.n_heads) for a in (q, k, v))
        logits = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        att, cache_att = nn.softmax(logits)
        ctx = _merge_heads(att @ vh)
        o, cache_o = nn.linear(ctx, t[f"l{i}_wo"], t[f"l{i}_bo"])
        x = x + o
        h2, cache_ln2 = nn.layer_norm(x, t[f"l{i}_ln2_g"], t[f"l{i}_ln2_b"])
        f1_, cache_f1 = nn.linear(h2, t[f"l{i}_ffn1_w"], t[f"l{i}_ffn1_b"])
        a1, mask_ffn = nn.relu(f1_)
        f2_, cache_f2 = nn.linear(a1, t[f"l{i}_ffn2_w"], t[f"l{i}_ffn2_b"])
        x = x + f2_
        layer_caches.append(
            (cache_ln1, cache_q, cache_k, cache_v, qh, kh, vh, cache_att, cache_o,
             cache_ln2, cache_f1, mask_ffn, cache_f2)
        )

    y, cache_final = nn.layer_norm(x, t["final_ln_g"], t["final_ln_b"])
    cls_out = y[:, 0, :]
    logits_out, cache_head = nn.linear(cls_out, t["head_w"], t["head_b"])
    scores, cache_tanh = nn.tanh_act(logits_out[:, 0])
    cache = (cache_proj, layer_caches, cache_final, y.shape, cache_head, cache_tanh, params, scale)
    return scores, cache


def f4_backward_batch(dscores: np.ndarray, cache, need_input_grad: bool = False):
    """Gradients for all parameters and, optionally, the input maps."""
    (cache_proj, layer_caches, cache_final, y_shape, cache_head, cache_tanh, params, scale) = cache
    grads: dict[str, np.ndarray] = {}

    dlogits_out = nn.tanh_backward(dscores, cache_tanh)[:, None]
    dcls_out, grads["head_w"], grads["head_b"] = nn.linear_backward(dlogits_out, cache_head)
    dy = np.zeros(y_shape)
    dy[:, 0, :] = dcls_out
    dx, grads["final_ln_g"], grads["final_ln_b"] = nn.layer_norm_backward(dy, cache_final)

    for i in reversed(range(params.n_layers)):
        (cache_ln1, cache_q, cache_k, cache_v, qh, kh, vh, cache_att, cache_o,
         cache_ln2, cache_f1, mask_ffn, cache_f2) = layer_caches[i]
        # FFN block: x_out = x_mid + ffn(LN2(x_mid))
        da1, grads[f"l{i}_ffn2_w"], grads[f"l{i}_ffn2_b"] = nn.linear_backward(dx, cache_f2)
        df1 = nn.relu_backward(da1, mask_ffn)
        dh2, grads[f"l{i}_ffn1_w"], grads[f"l{i}_ffn1_b"] = nn.linear_backward(df1, cache_f1)
        dmid, grads[f"l{i}_ln2_g"], grads[f"l{i}_ln2_b"] = nn.layer_norm_backward(dh2, cache_ln2)
        dx = dx + dmid
        # attention block: x_mid = x_in + attn(LN1(x_in))
        dctx, grads[f"l{i}_wo"], grads[f"l{i}_bo"] = nn.linear_backward(dx, cache_o)
        dctx_h = _split_heads(dctx, params.n_heads)
        datt = dctx_h @ vh.transpose(0, 1, 3, 2)
        dvh = cache_att.transpose(0, 1, 3, 2) @ dctx_h
        dlogits = nn.softmax_backward(datt, cache_att) * scale
        dqh = dlogits @ kh
        dkh = dlogits.transpose(0, 1, 3, 2) @ qh
        dq, dk, dv = (_merge_heads(a) for a in (dqh, dkh, dvh))
        dh_q, grads[f"l{i}_wq"], grads[f"l{i}_bq"] = nn.linear_backward(dq, cache_q)
        dh_k, grads[f"l{i}_wk"], grads[f"l{i}_bk"] = nn.linear_backward(dk, cache_k)
        dh_v, grads[f"l{i}_wv"], grads[f"l{i}_bv"] = nn.linear_backward(dv, cache_v)
        dh = dh_q + dh_k + dh_v
        din, grads[f"l{i}_ln1_g"], grads[f"l{i}_ln1_b"] = nn.layer_norm_backward(dh, cache_ln1)
        dx = dx + din

    grads["pos"] = dx.sum(axis=0)
    grads["cls"] = dx[:, 0, :].sum(axis=0)
    dproj = dx[:, 1:, :]
    dpatches, grads["patch_w"], grads["patch_b"] = nn.linear_backward(dproj, cache_proj)
    dmaps = None
    if need_input_grad:
        dmaps = _unpatchify_batch(dpatches, params.pad_side, params.patch_side)
    return grads, dmaps

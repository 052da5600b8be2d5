"""F3: tiny CNN over phi-space similarity maps.

Two same-padded 3x3 conv layers (1->8->16 channels), adaptive 4x4 mean pool,
then a 256->64->1 head with a tanh output. Input maps are zero-padded (or
lead-truncated) to ``pad_side`` before the convolution stack, which together
with the adaptive pool makes the verifier size-tolerant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import nn, simmap
from ..errors import ShapeMismatch

CNN_SHAPES = {
    "conv1_w": (3, 3, 1, 8),
    "conv1_b": (8,),
    "conv2_w": (3, 3, 8, 16),
    "conv2_b": (16,),
    "head1_w": (256, 64),
    "head1_b": (64,),
    "head2_w": (64, 1),
    "head2_b": (1,),
}


@dataclass
class CnnParams:
    tensors: dict[str, np.ndarray]
    pad_side: int = 64

    def __post_init__(self):
        validate_cnn_shapes(self.tensors)

    def copy(self) -> "CnnParams":
        return CnnParams(
            tensors={k: v.copy() for k, v in self.tensors.items()}, pad_side=self.pad_side
        )


def validate_cnn_shapes(tensors: dict[str, np.ndarray]) -> None:
    for name, shape in CNN_SHAPES.items():
        if name not in tensors:
            raise ShapeMismatch(f"missing tensor {name!r}")
        if tuple(tensors[name].shape) != shape:
            raise ShapeMismatch(
                f"{name}: expected shape {shape}, got {tuple(tensors[name].shape)}"
            )


def init_cnn_params(seed: int = 42, pad_side: int = 64) -> CnnParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in CNN_SHAPES.items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape)
        elif name.startswith("conv"):
            fan_in = shape[0] * shape[1] * shape[2]
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        elif name == "head2_w":
            tensors[name] = rng.normal(0.0, 0.02, size=shape)
        else:
            tensors[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
    return CnnParams(tensors=tensors, pad_side=pad_side)


def f3_forward(m01: np.ndarray, params: CnnParams) -> float:
    """Score one phi-space map; returns a scalar in (-1, 1)."""
    padded = simmap.pad_to_square(np.asarray(m01, dtype=np.float64), params.pad_side)
    scores, _ = f3_forward_batch(padded[None, :, :], params)
    return float(scores[0])


def f3_forward_batch(maps01: np.ndarray, params: CnnParams):
    """Batched forward over (N, pad_side, pad_side) phi-space maps."""
    t = params.tensors
    if maps01.shape[1] != params.pad_side or maps01.shape[2] != params.pad_side:
        raise ShapeMismatch(
            f"expected (N, {params.pad_side}, {params.pad_side}) maps, got {maps01.shape}"
        )
    x = maps01[..., None]
    c1, cache_c1 = nn.conv2d_3x3(x, t["conv1_w"], t["conv1_b"])
    r1, mask1 = nn.relu(c1)
    c2, cache_c2 = nn.conv2d_3x3(r1, t["conv2_w"], t["conv2_b"])
    r2, mask2 = nn.relu(c2)
    pooled, cache_pool = nn.adaptive_avg_pool(r2, 4)
    flat = pooled.reshape(pooled.shape[0], -1)
    h1, cache_h1 = nn.linear(flat, t["head1_w"], t["head1_b"])
    a1, mask_h1 = nn.relu(h1)
    h2, cache_h2 = nn.linear(a1, t["head2_w"], t["head2_b"])
    out, cache_tanh = nn.tanh_act(h2[:, 0])
    cache = (cache_c1, mask1, cache_c2, mask2, cache_pool, pooled.shape, cache_h1, mask_h1, cache_h2, cache_tanh)
    return out, cache


def f3_backward_batch(dscores: np.ndarray, cache, need_input_grad: bool = False):
    """Gradients for all parameters and, optionally, the input maps."""
    (cache_c1, mask1, cache_c2, mask2, cache_pool, pooled_shape, cache_h1, mask_h1, cache_h2, cache_tanh) = cache
    grads: dict[str, np.ndarray] = {}
    dh2 = nn.tanh_backward(dscores, cache_tanh)[:, None]
    da1, grads["head2_w"], grads["head2_b"] = nn.linear_backward(dh2, cache_h2)
    dh1 = nn.relu_backward(da1, mask_h1)
    dflat, grads["head1_w"], grads["head1_b"] = nn.linear_backward(dh1, cache_h1)
    dpool = dflat.reshape(pooled_shape)
    dr2 = nn.adaptive_avg_pool_backward(dpool, cache_pool)
    dc2 = nn.relu_backward(dr2, mask2)
    dr1, grads["conv2_w"], grads["conv2_b"] = nn.conv2d_3x3_backward(dc2, cache_c2)
    dc1 = nn.relu_backward(dr1, mask1)
    dx, grads["conv1_w"], grads["conv1_b"] = nn.conv2d_3x3_backward(dc1, cache_c1)
    dmaps = dx[..., 0] if need_input_grad else None
    return grads, dmaps

"""Small neural-net toolkit: layer forward/backward pairs, AdamW, grad checks.

Every layer follows the same shape: ``forward(...) -> (out, cache)`` and
``backward(dout, cache) -> gradients``. All math is float64; persistence
rounds to float32 elsewhere. Parameters live in plain ``dict[str, ndarray]``
so the optimizer and the finite-difference harness can walk them uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SparseRows:
    """Row-sparse gradient for an embedding table: unique ids + summed rows."""

    ids: np.ndarray
    rows: np.ndarray


# ---------------------------------------------------------------- primitives


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y = x @ w + b for x of shape (..., in)."""
    return x @ w + b, (x, w)


def linear_backward(dout: np.ndarray, cache):
    x, w = cache
    dx = dout @ w.T
    flat_x = x.reshape(-1, x.shape[-1])
    flat_d = dout.reshape(-1, dout.shape[-1])
    dw = flat_x.T @ flat_d
    db = flat_d.sum(axis=0)
    return dx, dw, db


def relu(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, (x > 0.0)


def relu_backward(dout: np.ndarray, mask):
    return dout * mask


def tanh_act(x: np.ndarray):
    out = np.tanh(x)
    return out, out


def tanh_backward(dout: np.ndarray, out):
    return dout * (1.0 - out * out)


def row_normalize(x: np.ndarray):
    """Scale each row of (..., d) to unit norm; caller guarantees no zero row."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    out = x / norms
    return out, (out, norms)


def row_normalize_backward(dout: np.ndarray, cache):
    # Projection of the upstream gradient onto the sphere's tangent space.
    out, norms = cache
    inner = np.sum(dout * out, axis=-1, keepdims=True)
    return (dout - inner * out) / norms


def softmax(x: np.ndarray):
    """Softmax over the last axis with max-subtraction for stability."""
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def softmax_backward(dout: np.ndarray, out):
    inner = np.sum(dout * out, axis=-1, keepdims=True)
    return (dout - inner) * out


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, gamma = cache
    d = xhat.shape[-1]
    dxhat = dout * gamma
    dgamma = np.sum(dout * xhat, axis=tuple(range(dout.ndim - 1)))
    dbeta = np.sum(dout, axis=tuple(range(dout.ndim - 1)))
    dx = (
        inv
        / d
        * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
        )
    )
    return dx, dgamma, dbeta


def conv2d_3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded 3x3 convolution.

    x: (N, H, W, Cin); w: (3, 3, Cin, Cout); b: (Cout,).
    """
    n, h, wd, cin = x.shape
    padded = np.zeros((n, h + 2, wd + 2, cin), dtype=x.dtype)
    padded[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, wd, 9 * cin), dtype=x.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            cols[..., k * cin : (k + 1) * cin] = padded[:, di : di + h, dj : dj + wd, :]
            k += 1
    wmat = w.reshape(9 * cin, -1)
    out = (cols.reshape(-1, 9 * cin) @ wmat + b).reshape(n, h, wd, -1)
    return out, (cols, wmat, x.shape)


def conv2d_3x3_backward(dout: np.ndarray, cache):
    cols, wmat, x_shape = cache
    n, h, wd, cin = x_shape
    cout = dout.shape[-1]
    dflat = dout.reshape(-1, cout)
    dw = (cols.reshape(-1, 9 * cin).T @ dflat).reshape(3, 3, cin, cout)
    db = dflat.sum(axis=0)
    dcols = (dflat @ wmat.T).reshape(n, h, wd, 9 * cin)
    dpad = np.zeros((n, h + 2, wd + 2, cin), dtype=dout.dtype)
    k = 0
    for di in range(3):
        for dj in range(3):
            dpad[:, di : di + h, dj : dj + wd, :] += dcols[..., k * cin : (k + 1) * cin]
            k += 1
    return dpad[:, 1:-1, 1:-1, :], dw, db


def adaptive_avg_pool(x: np.ndarray, out_side: int):
    """Mean-pool (N, H, W, C) onto an out_side x out_side grid."""
    n, h, w, c = x.shape
    he = [h * i // out_side for i in range(out_side + 1)]
    we = [w * i // out_side for i in range(out_side + 1)]
    out = np.empty((n, out_side, out_side, c), dtype=x.dtype)
    for i in range(out_side):
        for j in range(out_side):
            out[:, i, j, :] = x[:, he[i] : he[i + 1], we[j] : we[j + 1], :].mean(axis=(1, 2))
    return out, (x.shape, he, we)


def adaptive_avg_pool_backward(dout: np.ndarray, cache):
    x_shape, he, we = cache
    dx = np.zeros(x_shape, dtype=dout.dtype)
    out_side = dout.shape[1]
    for i in range(out_side):
        for j in range(out_side):
            area = (he[i + 1] - he[i]) * (we[j + 1] - we[j])
            dx[:, he[i] : he[i + 1], we[j] : we[j + 1], :] += (
                dout[:, i : i + 1, j : j + 1, :] / area
            )
    return dx


# ---------------------------------------------------------------- optimizer


class AdamW:
    """AdamW with decoupled weight decay and a linear warmup/decay schedule.

    ``total_steps`` of 0 disables the schedule (constant base lr). The step
    with an effective lr of exactly 0 leaves parameters bitwise untouched.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        lr: float,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        total_steps: int = 0,
        warmup_ratio: float = 0.1,
    ):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.total_steps = total_steps
        self.warmup_steps = int(math.ceil(total_steps * warmup_ratio)) if total_steps else 0
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_at(self, t: int) -> float:
        if self.total_steps <= 0:
            return self.lr
        if self.warmup_steps and t <= self.warmup_steps:
            return self.lr * t / self.warmup_steps
        denom = max(1, self.total_steps - self.warmup_steps)
        return self.lr * max(0.0, (self.total_steps - t) / denom)

    def step(self, grads: dict[str, np.ndarray | SparseRows]) -> None:
        self.t += 1
        lr_t = self.lr_at(self.t)
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for key, p in self.params.items():
            g = grads.get(key)
            if g is None:
                continue
            if isinstance(g, SparseRows):
                self._step_sparse(key, p, g, lr_t, b1t, b2t)
                continue
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if lr_t != 0.0:
                update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
                if self.weight_decay:
                    update = update + self.weight_decay * p
                p -= lr_t * update

    def _step_sparse(self, key, p, g: SparseRows, lr_t, b1t, b2t) -> None:
        # Lazy Adam: rows untouched by the batch keep stale moments and are
        # not decayed; this keeps step cost proportional to the batch.
        ids = g.ids
        if ids.size == 0:
            return
        m = self.m[key]
        v = self.v[key]
        m_rows = self.beta1 * m[ids] + (1.0 - self.beta1) * g.rows
        v_rows = self.beta2 * v[ids] + (1.0 - self.beta2) * (g.rows * g.rows)
        m[ids] = m_rows
        v[ids] = v_rows
        if lr_t != 0.0:
            update = (m_rows / b1t) / (np.sqrt(v_rows / b2t) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p[ids]
            p[ids] -= lr_t * update


# ---------------------------------------------------------------- grad check


def grad_check(
    loss_fn,
    tensors: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-4,
    max_elems: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic grads and central differences.

    Every tensor is touched; tensors with more than ``max_elems`` entries are
    probed at a seeded random subset of positions.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor in tensors.items():
        grad = analytic[name]
        flat = tensor.reshape(-1)
        gflat = grad.reshape(-1)
        n = flat.size
        if n <= max_elems:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=max_elems, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = gflat[i]
            err = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst

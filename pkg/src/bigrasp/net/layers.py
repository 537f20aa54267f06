"""Network building blocks on top of :mod:`bigrasp.net.tensor`.

Parameters live in a flat ``dict[str, Tensor]``; each block reads the keys
under its own prefix (``"enc.0.attn.wq"`` ...).
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..geometry import ball_query, farthest_point_sampling
from .tensor import Tensor, concat, gelu, layer_norm, softmax


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"linear: input {x.shape}, weight {W.shape}, bias {b.shape}")
    return x @ W + b


def softmax_rows(x: Tensor) -> Tensor:
    return softmax(x, axis=-1)


def dense(params, prefix: str, x: Tensor) -> Tensor:
    return linear(x, params[prefix + ".w"], params[prefix + ".b"])


def mlp(params, prefix: str, x: Tensor, layers: int, final_activation: bool = False) -> Tensor:
    """``layers`` dense layers with GELU between them."""
    for i in range(layers):
        x = dense(params, f"{prefix}.{i}", x)
        if i < layers - 1 or final_activation:
            x = gelu(x)
    return x


def residual_mlp(params, prefix: str, x: Tensor, layers: int) -> Tensor:
    """Prediction head: ``layers`` dense layers; the square hidden ones are residual.

    Plain deep stacks with fan-in scaled init shrink the signal at every
    layer, so the middle layers add to their input instead of replacing it.
    """
    if layers == 1:
        return dense(params, f"{prefix}.0", x)
    h = gelu(dense(params, f"{prefix}.0", x))
    for i in range(1, layers - 1):
        h = h + gelu(dense(params, f"{prefix}.{i}", h))
    return dense(params, f"{prefix}.{layers - 1}", h)


def norm(params, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[prefix + ".g"], params[prefix + ".b"])


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, params, prefix: str, heads: int,
                         return_weights: bool = False):
    """Scaled dot-product attention with input and output projections.

    ``q`` is ``(n, C)``; ``k`` and ``v`` are ``(m, C)``.
    """
    C = q.shape[-1]
    if k.shape[-1] != C or v.shape[-1] != C or k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    if C % heads:
        raise ShapeError(f"embedding dim {C} not divisible by {heads} heads")
    dh = C // heads
    n, m = q.shape[0], k.shape[0]
    Q = dense(params, prefix + ".q", q).reshape(n, heads, dh).transpose(1, 0, 2)
    K = dense(params, prefix + ".k", k).reshape(m, heads, dh).transpose(1, 2, 0)
    V = dense(params, prefix + ".v", v).reshape(m, heads, dh).transpose(1, 0, 2)
    A = softmax(Q @ K / np.sqrt(dh), axis=-1)  # (heads, n, m)
    out = (A @ V).transpose(1, 0, 2).reshape(n, C)
    out = dense(params, prefix + ".o", out)
    return (out, A) if return_weights else out


def sgb_attention(Qb: Tensor, F_sgp: Tensor, return_weights: bool = False):
    """``softmax(Qb F_sgp^T / sqrt(d)) F_sgp``: bimanual queries read single-grasp features.

    No projections: single-grasp features act directly as keys and values.
    """
    if Qb.ndim != 2 or F_sgp.ndim != 2 or Qb.shape[1] != F_sgp.shape[1]:
        raise ShapeError(f"sgb_attention: queries {Qb.shape}, features {F_sgp.shape}")
    d = Qb.shape[1]
    A = softmax(Qb @ F_sgp.transpose() / np.sqrt(d), axis=-1)
    out = A @ F_sgp
    return (out, A) if return_weights else out


def set_abstraction(points, centers: int, radius: float, params, prefix: str, n_max: int = 32,
                    features: Tensor | None = None, mlp_layers: int = 2):
    """Single-scale set abstraction: FPS centers, ball grouping, shared MLP, max-pool.

    Group members are encoded as offsets from their center divided by
    ``radius``, concatenated with ``features`` when given. Returns
    ``(center_indices, pooled)`` with ``pooled`` of shape ``(centers, C_out)``.
    """
    pts = np.asarray(points, dtype=np.float64)
    idx = farthest_point_sampling(pts, centers)
    groups = ball_query(pts, pts[idx], radius, n_max, center_idx=idx)  # (centers, n_max)
    rel = Tensor((pts[groups] - pts[idx][:, None, :]) / radius)
    x = rel if features is None else concat([rel, features[groups]], axis=-1)
    h = mlp(params, prefix, x, mlp_layers, final_activation=True)
    return idx, h.max(axis=1)


def attention_block(params, prefix: str, x: Tensor, heads: int) -> Tensor:
    """Pre-norm self-attention + feed-forward encoder block."""
    h = norm(params, prefix + ".ln1", x)
    x = x + multi_head_attention(h, h, h, params, prefix + ".attn", heads)
    return x + feed_forward(params, prefix, x)


def feed_forward(params, prefix: str, x: Tensor) -> Tensor:
    h = norm(params, prefix + ".ln_ff", x)
    return dense(params, prefix + ".ff.1", gelu(dense(params, prefix + ".ff.0", h)))

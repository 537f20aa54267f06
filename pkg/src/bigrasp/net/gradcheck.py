"""Central finite-difference checks for every differentiable piece of the network.

Each check builds a scalar from an op's output (a fixed random projection),
backpropagates once, then compares a sample of gradient entries against
``(f(x + h) - f(x - h)) / 2h``. The per-check error is
``||analytic - numeric|| / max(||analytic||, ||numeric||)`` over the sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..geometry import GraspPose, GripperSpec, random_rotation
from ..matcher import BimanualGrasp
from ..rng import stream
from .layers import linear, multi_head_attention, set_abstraction, sgb_attention, softmax_rows
from .model import ModelConfig, bgg_decode, encoder_forward, forward, init_weights, keypoints, sgp_decode
from .tensor import Tensor, concat, gelu, layer_norm, normalize, parameter
from .train import TrainSample, sample_loss

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradResult:
    name: str
    rel_error: float
    checked: int

    @property
    def ok(self) -> bool:
        return self.rel_error < TOLERANCE


def check_gradients(fn: Callable[[], Tensor], params: dict, rng: np.random.Generator, per_param: int = 6,
                    step: float = STEP, corrupt: bool = False) -> tuple[float, int]:
    """Compare backprop against central differences on sampled entries of ``params``.

    ``fn`` recomputes the scalar from the current contents of ``params``.
    ``corrupt`` scales the analytic gradient by 1.01 (a negative control).
    """
    for p in params.values():
        p.zero_grad()
    fn().backward()
    analytic, numeric = [], []
    for name, p in params.items():
        g = np.zeros(p.shape) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(per_param, flat.size), replace=False)
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn().data)
            flat[i] = orig - step
            down = float(fn().data)
            flat[i] = orig
            numeric.append((up - down) / (2 * step))
            analytic.append(g.reshape(-1)[i])
    a, n = np.array(analytic), np.array(numeric)
    if corrupt:
        a = a * 1.01
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    return (0.0 if denom == 0 else float(np.linalg.norm(a - n) / denom)), len(a)


def _projected(out_fn, shape, rng):
    R = rng.standard_normal(shape)
    return lambda: (out_fn() * R).sum()


def _small_config() -> ModelConfig:
    return ModelConfig(n_points=32, n_centers=8, embed_dim=16, single_queries=6, bimanual_queries=6,
                       encoder_blocks=1, decoder_blocks=1, attention_heads=2, seed=3)


def _sampled_weights(weights: dict, prefixes, rng, limit: int = 10) -> dict:
    names = [n for n in weights if n.startswith(tuple(prefixes))]
    chosen = rng.choice(len(names), size=min(limit, len(names)), replace=False)
    return {names[i]: weights[names[i]] for i in sorted(chosen)}


def _random_poses(n, rng, spec):
    return [GraspPose(random_rotation(rng), rng.uniform(-0.05, 0.05, 3), rng.uniform(0.02, spec.max_opening))
            for _ in range(n)]


def _cases(rng: np.random.Generator):
    """Yield ``(name, scalar fn, params)`` for each check."""
    spec = GripperSpec()

    x, W, b = (parameter(rng.standard_normal(s)) for s in ((3, 4), (4, 5), (5,)))
    yield "linear", _projected(lambda: linear(x, W, b), (3, 5), rng), {"x": x, "W": W, "b": b}

    s = parameter(rng.standard_normal((4, 7)))
    yield "softmax_rows", _projected(lambda: softmax_rows(s), (4, 7), rng), {"x": s}

    gx = parameter(rng.standard_normal((5, 6)) * 2)
    yield "gelu", _projected(lambda: gelu(gx), (5, 6), rng), {"x": gx}

    lx, lg, lb = parameter(rng.standard_normal((4, 8))), parameter(rng.standard_normal(8)), parameter(rng.standard_normal(8))
    yield "layer_norm", _projected(lambda: layer_norm(lx, lg, lb), (4, 8), rng), {"x": lx, "gamma": lg, "beta": lb}

    ex = parameter(rng.uniform(0.5, 2.0, (3, 4)))
    ey = parameter(rng.uniform(0.5, 2.0, (4, 3)))

    def elementwise():
        z = concat([ex.exp(), ex.tanh(), ex.sigmoid(), ex.sqrt(), (ex / ex.sum(axis=0)).abs()], axis=0)
        return (z @ ey)[1:5].mean(axis=1) - z.max(axis=0).sum()

    yield "tensor_ops", _projected(elementwise, (4,), rng), {"x": ex, "y": ey}

    nx = parameter(rng.standard_normal((5, 3)))
    yield "normalize", _projected(lambda: normalize(nx), (5, 3), rng), {"x": nx}

    C, heads = 8, 2
    mha = {f"attn.{p}.{k}": parameter(rng.uniform(-0.5, 0.5, (C, C) if k == "w" else (C,)))
           for p in "qkvo" for k in "wb"}
    q, kv = parameter(rng.standard_normal((3, C))), parameter(rng.standard_normal((4, C)))
    yield ("multi_head_attention",
           _projected(lambda: multi_head_attention(q, kv, kv, mha, "attn", heads), (3, C), rng),
           {"q": q, "kv": kv, **mha})

    Qb, F = parameter(rng.standard_normal((4, 8))), parameter(rng.standard_normal((6, 8)))
    yield "sgb_attention", _projected(lambda: sgb_attention(Qb, F), (4, 8), rng), {"Qb": Qb, "F_sgp": F}

    pts = rng.uniform(-0.5, 0.5, (40, 3))
    feats = parameter(rng.standard_normal((40, 4)))
    sa = {"sa.0.w": parameter(rng.uniform(-0.5, 0.5, (7, 12))), "sa.0.b": parameter(rng.uniform(-0.5, 0.5, 12)),
          "sa.1.w": parameter(rng.uniform(-0.5, 0.5, (12, 10))), "sa.1.b": parameter(rng.uniform(-0.5, 0.5, 10))}
    yield ("set_abstraction",
           _projected(lambda: set_abstraction(pts, 8, 0.4, sa, "sa", 8, features=feats)[1], (8, 10), rng),
           {"features": feats, **sa})

    cfg = _small_config()
    weights = init_weights(cfg)
    cloud = rng.uniform(-0.03, 0.03, (cfg.n_points, 3))
    C = cfg.embed_dim
    yield ("keypoints", *_keypoint_case(rng, spec))

    yield ("encoder_forward", _projected(lambda: encoder_forward(cloud, cfg, weights)[0], (cfg.n_centers, C), rng),
           _sampled_weights(weights, ["enc."], rng))

    F_g = parameter(rng.standard_normal((cfg.n_centers, C)))
    _, frame = encoder_forward(cloud, cfg, weights)

    def sgp():
        F_sgp, out = sgp_decode(F_g, cfg, weights, frame, spec)
        return concat([F_sgp, out.closing, out.approach, out.translation, out.width.reshape(-1, 1)], axis=-1)

    yield ("sgp_decode", _projected(sgp, (cfg.single_queries, C + 10), rng),
           {"F_g": F_g, **_sampled_weights(weights, ["sgp."], rng)})

    F_sgp = parameter(rng.standard_normal((cfg.single_queries, C)))

    def bgg():
        o = bgg_decode(F_g, F_sgp, cfg, weights, frame, spec)
        return concat([o.closing, o.approach, o.translation, o.width.reshape(-1, 1), o.closing2, o.approach2,
                       o.translation2, o.width2.reshape(-1, 1), o.quality.reshape(-1, 1)], axis=-1)

    yield ("bgg_decode", _projected(bgg, (cfg.bimanual_queries, 21), rng),
           {"F_g": F_g, "F_sgp": F_sgp, **_sampled_weights(weights, ["bgg."], rng)})

    singles = _random_poses(5, rng, spec)
    pairs = [BimanualGrasp(singles[i], singles[(i + 1) % 5], float(rng.uniform())) for i in range(4)]
    sample = TrainSample.from_grasps(cloud, singles, pairs, spec)
    yield ("end_to_end_loss", lambda: sample_loss(forward(cloud, cfg, weights, spec), sample, spec)[0],
           _sampled_weights(weights, ["enc.", "sgp.", "bgg."], rng, limit=16))


def _keypoint_case(rng, spec):
    t = parameter(rng.standard_normal((4, 3)))
    raw = parameter(rng.standard_normal((4, 6)))
    w = parameter(rng.uniform(0.01, 0.07, 4))

    def fn():
        x = normalize(raw[:, 0:3])
        a = raw[:, 3:6]
        z = normalize(a - x * (a * x).sum(axis=-1, keepdims=True))
        return keypoints(x, z, t, w, spec)

    return _projected(fn, (4, 5, 3), rng), {"translation": t, "axes": raw, "width": w}


def run_gradcheck(seed: int = 0, corrupt: str | None = None) -> list[GradResult]:
    """Run every check; ``corrupt`` names one check whose analytic gradient is perturbed."""
    rng = stream(seed, "gradcheck")
    results = []
    for name, fn, params in _cases(rng):
        err, n = check_gradients(fn, params, rng, corrupt=(name == corrupt or corrupt == "all"))
        results.append(GradResult(name, err, n))
    return results


CHECK_NAMES = ("linear", "softmax_rows", "gelu", "layer_norm", "tensor_ops", "normalize", "multi_head_attention",
               "sgb_attention", "set_abstraction", "keypoints", "encoder_forward", "sgp_decode", "bgg_decode",
               "end_to_end_loss")

"""Encoder, single-grasp proposer and bimanual generator.

Pipeline for one point cloud:

1. normalize the cloud (centroid at origin, unit extent),
2. two set-abstraction stages -> ``N'`` center features, plus a coordinate
   embedding and a learned per-center embedding,
3. pre-norm transformer encoder -> object features ``F_g`` (``N' x C``),
4. single-grasp decoder: ``K'`` learned queries cross-attend to ``F_g``;
   their final features are ``F_sgp`` and a 3-layer head predicts grasps,
5. bimanual decoder: ``M'`` learned queries first read ``F_sgp`` through
   SGB attention; every block then cross-attends separately to the SGB
   output and to ``F_g``; a 7-layer head predicts two grasps and a quality.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from ..errors import InvalidArgument, ShapeError
from ..geometry import GraspPose, GripperSpec, KEYPOINT_DEPTH, KEYPOINT_LATERAL, as_cloud
from ..rng import stream
from .layers import attention_block, dense, feed_forward, multi_head_attention, norm, residual_mlp, set_abstraction, sgb_attention
from .tensor import Tensor, normalize, parameter

GRASP_PARAMS = 10  # closing (3), approach (3), translation (3), width (1)


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 2048
    n_centers: int = 512
    embed_dim: int = 512
    single_queries: int = 512
    bimanual_queries: int = 512
    encoder_blocks: int = 6
    decoder_blocks: int = 6
    attention_heads: int = 8
    sgp_head_layers: int = 3
    bgg_head_layers: int = 7
    head_hidden_dim: int | None = None  # None -> embed_dim
    sa_radii: tuple[float, float] = (1.0 / 8.0, 1.0 / 4.0)  # fractions of the cloud extent
    sa_n_max: int = 32
    sa1_dim: int | None = None  # None -> embed_dim // 2
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in ("head_hidden_dim", "sa1_dim") and val is None:
                continue
            if f.name == "seed":
                continue
            vals = val if isinstance(val, tuple) else (val,)
            if any(not v > 0 for v in vals):
                raise InvalidArgument(f"ModelConfig.{f.name} must be positive, got {val}")
        if self.embed_dim % self.attention_heads:
            raise InvalidArgument("embed_dim must be divisible by attention_heads")
        if self.n_centers > self.n_points:
            raise InvalidArgument("n_centers cannot exceed n_points")
        object.__setattr__(self, "sa_radii", tuple(float(r) for r in self.sa_radii))

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        base = dict(n_points=64, n_centers=16, embed_dim=32, single_queries=16, bimanual_queries=16,
                    encoder_blocks=2, decoder_blocks=2, attention_heads=8)
        base.update(overrides)
        return cls(**base)

    @property
    def hidden(self) -> int:
        return self.head_hidden_dim or self.embed_dim

    @property
    def stage1_centers(self) -> int:
        return min(self.n_points, 2 * self.n_centers)

    @property
    def stage1_dim(self) -> int:
        return self.sa1_dim or max(1, self.embed_dim // 2)

    def with_overrides(self, overrides: dict) -> "ModelConfig":
        kinds = {f.name: f.type for f in fields(self)}
        parsed = {}
        for key, raw in overrides.items():
            if key not in kinds:
                raise InvalidArgument(f"unknown model config key {key!r}")
            if key == "sa_radii":
                parsed[key] = tuple(float(x) for x in str(raw).split(","))
            elif key in ("head_hidden_dim", "sa1_dim") and str(raw).lower() == "none":
                parsed[key] = None
            else:
                parsed[key] = int(raw)
        return replace(self, **parsed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sa_radii"] = list(self.sa_radii)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "sa_radii" in d:
            d["sa_radii"] = tuple(d["sa_radii"])
        return cls(**d)


# --------------------------------------------------------------------------- weights


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) in a fixed order; kinds: uniform, ones, zeros."""
    C, H = cfg.embed_dim, cfg.hidden
    shapes = []

    def dense_(name, n_in, n_out):
        shapes.append((name + ".w", (n_in, n_out), "uniform"))
        shapes.append((name + ".b", (n_out,), "uniform"))

    def ln(name):
        shapes.append((name + ".g", (C,), "ones"))
        shapes.append((name + ".b", (C,), "zeros"))

    def attn(name):
        for p in ("q", "k", "v", "o"):
            dense_(f"{name}.{p}", C, C)

    def ffn(name):
        ln(name + ".ln_ff")
        dense_(name + ".ff.0", C, 4 * C)
        dense_(name + ".ff.1", 4 * C, C)

    c1 = cfg.stage1_dim
    dense_("enc.sa1.0", 3, c1)
    dense_("enc.sa1.1", c1, c1)
    dense_("enc.sa2.0", 3 + c1, C)
    dense_("enc.sa2.1", C, C)
    dense_("enc.pos", 3, C)
    shapes.append(("enc.center_embed", (cfg.n_centers, C), "uniform"))
    for i in range(cfg.encoder_blocks):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        ffn(f"enc.{i}")
    ln("enc.ln_out")

    shapes.append(("sgp.queries", (cfg.single_queries, C), "uniform"))
    for i in range(cfg.decoder_blocks):
        ln(f"sgp.{i}.ln1")
        attn(f"sgp.{i}.self")
        ln(f"sgp.{i}.ln2")
        attn(f"sgp.{i}.cross")
        ffn(f"sgp.{i}")
    ln("sgp.ln_out")
    dims = [C] + [H] * (cfg.sgp_head_layers - 1) + [GRASP_PARAMS]
    for i in range(cfg.sgp_head_layers):
        dense_(f"sgp.head.{i}", dims[i], dims[i + 1])

    shapes.append(("bgg.queries", (cfg.bimanual_queries, C), "uniform"))
    for i in range(cfg.decoder_blocks):
        ln(f"bgg.{i}.ln1")
        attn(f"bgg.{i}.self")
        ln(f"bgg.{i}.ln2")
        attn(f"bgg.{i}.cross_sgb")
        attn(f"bgg.{i}.cross_obj")
        ffn(f"bgg.{i}")
    ln("bgg.ln_out")
    dims = [C] + [H] * (cfg.bgg_head_layers - 1) + [2 * GRASP_PARAMS + 1]
    for i in range(cfg.bgg_head_layers):
        dense_(f"bgg.head.{i}", dims[i], dims[i + 1])
    return shapes


def init_weights(cfg: ModelConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; LayerNorm gains 1, offsets 0.

    Biases use their layer's fan-in; embeddings and queries use ``embed_dim``.
    """
    rng = stream(cfg.seed if seed is None else seed, "init")
    weights = {}
    fan_in = cfg.embed_dim
    for name, shape, kind in _param_shapes(cfg):
        if kind == "ones":
            data = np.ones(shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        else:
            if name.endswith(".w"):
                fan_in = shape[0]
            elif not name.endswith(".b"):
                fan_in = cfg.embed_dim
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        weights[name] = parameter(data)
    return weights


def check_weights(weights: dict, cfg: ModelConfig):
    from ..errors import WeightsMismatch

    expected = {name: shape for name, shape, _ in _param_shapes(cfg)}
    if set(expected) != set(weights):
        missing = sorted(set(expected) - set(weights))[:3]
        extra = sorted(set(weights) - set(expected))[:3]
        raise WeightsMismatch(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tuple(weights[name].shape) != shape:
            raise WeightsMismatch(f"{name}: expected shape {shape}, got {tuple(weights[name].shape)}")


# --------------------------------------------------------------------------- forward


class CloudFrame(NamedTuple):
    """Normalization applied to the input cloud; predictions are mapped back with it."""
    centroid: np.ndarray
    extent: float

    @classmethod
    def of(cls, points) -> "CloudFrame":
        pts = as_cloud(points)
        c = pts.mean(axis=0)
        ext = float((pts.max(axis=0) - pts.min(axis=0)).max())
        return cls(c, ext if ext > 0 else 1.0)

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points) - self.centroid) / self.extent


def encoder_forward(cloud, cfg: ModelConfig, weights) -> tuple[Tensor, CloudFrame]:
    """Object features ``F_g`` of shape ``(n_centers, embed_dim)``."""
    pts = as_cloud(cloud)
    if len(pts) != cfg.n_points:
        raise ShapeError(f"expected {cfg.n_points} points, got {len(pts)}")
    frame = CloudFrame.of(pts)
    p = frame.apply(pts)
    r1, r2 = cfg.sa_radii
    idx1, f1 = set_abstraction(p, cfg.stage1_centers, r1, weights, "enc.sa1", cfg.sa_n_max)
    c1 = p[idx1]
    idx2, f2 = set_abstraction(c1, cfg.n_centers, r2, weights, "enc.sa2", cfg.sa_n_max, features=f1)
    centers = Tensor(c1[idx2])
    x = f2 + dense(weights, "enc.pos", centers) + weights["enc.center_embed"]
    for i in range(cfg.encoder_blocks):
        x = attention_block(weights, f"enc.{i}", x, cfg.attention_heads)
    return norm(weights, "enc.ln_out", x), frame


def _decoder_block(weights, prefix, q, memories, heads):
    h = norm(weights, prefix + ".ln1", q)
    q = q + multi_head_attention(h, h, h, weights, prefix + ".self", heads)
    h = norm(weights, prefix + ".ln2", q)
    fused = None
    for name, mem in memories:
        out = multi_head_attention(h, mem, mem, weights, f"{prefix}.{name}", heads)
        fused = out if fused is None else fused + out
    q = q + fused
    return q + feed_forward(weights, prefix, q)


class GraspHeadOutput(NamedTuple):
    """Decoded per-query grasps in world coordinates (Tensors, still differentiable).

    ``closing``/``approach`` are orthonormal rotation columns; ``quality`` is
    ``None`` for the single-grasp head.
    """
    closing: Tensor
    approach: Tensor
    translation: Tensor
    width: Tensor
    closing2: Tensor | None = None
    approach2: Tensor | None = None
    translation2: Tensor | None = None
    width2: Tensor | None = None
    quality: Tensor | None = None


# canonical offsets keep the initial orientation vectors away from zero length
_CLOSING_BIAS = np.array([1.0, 0.0, 0.0])
_APPROACH_BIAS = np.array([0.0, 0.0, 1.0])


def _decode(raw: Tensor, frame: CloudFrame, spec: GripperSpec):
    """Raw head slice ``(n, 10)`` -> closing, approach, translation, width."""
    x = normalize(raw[:, 0:3] + _CLOSING_BIAS)
    a = raw[:, 3:6] + _APPROACH_BIAS
    a = a - x * (a * x).sum(axis=-1, keepdims=True)
    z = normalize(a)
    t = raw[:, 6:9] * frame.extent + frame.centroid
    w = raw[:, 9].sigmoid() * spec.max_opening
    return x, z, t, w


def sgp_decode(F_g: Tensor, cfg: ModelConfig, weights, frame: CloudFrame, spec: GripperSpec = GripperSpec()):
    """Single-grasp proposals; returns ``(F_sgp, GraspHeadOutput)``."""
    if F_g.shape != (cfg.n_centers, cfg.embed_dim):
        raise ShapeError(f"object features {F_g.shape} do not match config")
    q = weights["sgp.queries"]
    for i in range(cfg.decoder_blocks):
        q = _decoder_block(weights, f"sgp.{i}", q, [("cross", F_g)], cfg.attention_heads)
    F_sgp = norm(weights, "sgp.ln_out", q)
    raw = residual_mlp(weights, "sgp.head", F_sgp, cfg.sgp_head_layers)
    return F_sgp, GraspHeadOutput(*_decode(raw, frame, spec))


def bgg_decode(F_g: Tensor, F_sgp: Tensor, cfg: ModelConfig, weights, frame: CloudFrame,
               spec: GripperSpec = GripperSpec()) -> GraspHeadOutput:
    if F_g.shape != (cfg.n_centers, cfg.embed_dim) or F_sgp.shape[1] != cfg.embed_dim:
        raise ShapeError(f"features {F_g.shape} / {F_sgp.shape} do not match config")
    q = weights["bgg.queries"]
    F_sgb = sgb_attention(q, F_sgp)
    for i in range(cfg.decoder_blocks):
        q = _decoder_block(weights, f"bgg.{i}", q, [("cross_sgb", F_sgb), ("cross_obj", F_g)], cfg.attention_heads)
    raw = residual_mlp(weights, "bgg.head", norm(weights, "bgg.ln_out", q), cfg.bgg_head_layers)
    first = _decode(raw[:, 0:GRASP_PARAMS], frame, spec)
    second = _decode(raw[:, GRASP_PARAMS:2 * GRASP_PARAMS], frame, spec)
    quality = raw[:, 2 * GRASP_PARAMS].sigmoid()
    return GraspHeadOutput(*first, *second, quality)


class ForwardOutput(NamedTuple):
    single: GraspHeadOutput
    bimanual: GraspHeadOutput
    F_g: Tensor
    F_sgp: Tensor


def forward(cloud, cfg: ModelConfig, weights, spec: GripperSpec = GripperSpec()) -> ForwardOutput:
    F_g, frame = encoder_forward(cloud, cfg, weights)
    F_sgp, single = sgp_decode(F_g, cfg, weights, frame, spec)
    bimanual = bgg_decode(F_g, F_sgp, cfg, weights, frame, spec)
    return ForwardOutput(single, bimanual, F_g, F_sgp)


def keypoints(closing: Tensor, approach: Tensor, translation: Tensor, width: Tensor,
              spec: GripperSpec = GripperSpec()) -> Tensor:
    """Differentiable ``(n, 5, 3)`` gripper keypoints (same layout as ``gripper_keypoints``)."""
    n = closing.shape[0]
    lateral = (width * 0.5).reshape(n, 1, 1) * KEYPOINT_LATERAL.reshape(1, 5, 1) * closing.reshape(n, 1, 3)
    depth = Tensor(KEYPOINT_DEPTH.reshape(1, 5, 1) * spec.finger_length) * approach.reshape(n, 1, 3)
    return translation.reshape(n, 1, 3) + lateral + depth


def to_poses(closing: Tensor, approach: Tensor, translation: Tensor, width: Tensor) -> list[GraspPose]:
    x, z, t, w = closing.data, approach.data, translation.data, width.data
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=-1)
    return [GraspPose(R[i], t[i], w[i]) for i in range(len(x))]


def model_forward(cloud, cfg: ModelConfig, weights, spec: GripperSpec = GripperSpec()):
    """Inference: ``(GraspSet of K' singles, list of M' BimanualGrasp)``."""
    from ..matcher import BimanualGrasp
    from ..sampler import GraspSet

    out = forward(cloud, cfg, weights, spec)
    s, b = out.single, out.bimanual
    singles = GraspSet(to_poses(s.closing, s.approach, s.translation, s.width))
    first = to_poses(b.closing, b.approach, b.translation, b.width)
    second = to_poses(b.closing2, b.approach2, b.translation2, b.width2)
    pairs = [BimanualGrasp(g1, g2, float(q)) for g1, g2, q in zip(first, second, b.quality.data)]
    return singles, pairs

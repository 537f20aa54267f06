"""Matched set-prediction loss on network outputs, AdamW, and the training step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyTargets, TrainingDiverged
from ..geometry import GripperSpec, as_cloud
from ..matcher import hungarian, keypoint_distance, keypoints_of, pair_cost_matrices
from .model import ModelConfig, forward, keypoints
from .tensor import Tensor, norm


@dataclass
class TrainSample:
    """One object: its input cloud and precomputed ground truth (keypoints + pair qualities)."""

    cloud: np.ndarray
    single_kp: np.ndarray  # (G, 5, 3)
    pair_kp1: np.ndarray  # (M, 5, 3)
    pair_kp2: np.ndarray
    pair_quality: np.ndarray  # (M,)

    @classmethod
    def from_grasps(cls, cloud, singles, pairs, spec: GripperSpec = GripperSpec()) -> "TrainSample":
        singles, pairs = list(singles), list(pairs)
        if not singles or not pairs:
            raise EmptyTargets("training sample needs single and pair ground truth")
        return cls(as_cloud(cloud), keypoints_of(singles, spec), keypoints_of([p.g1 for p in pairs], spec),
                   keypoints_of([p.g2 for p in pairs], spec), np.array([p.quality for p in pairs]))


def _mean_dist(a: Tensor, b) -> Tensor:
    """Mean keypoint distance per row for ``(n, 5, 3)`` stacks."""
    return norm(a - b, axis=-1).mean(axis=-1)


def sample_loss(out, sample: TrainSample, spec: GripperSpec = GripperSpec()):
    """Differentiable matched loss for one sample; returns ``(loss Tensor, info dict)``.

    Assignments come from the Hungarian solver on detached costs and are then
    held fixed while the loss is differentiated.
    """
    s, b = out.single, out.bimanual
    kp_s = keypoints(s.closing, s.approach, s.translation, s.width, spec)
    if not (np.all(np.isfinite(kp_s.data)) and np.all(np.isfinite(b.quality.data))):
        raise TrainingDiverged("network produced non-finite predictions")
    single_asg = hungarian(keypoint_distance(kp_s.data, sample.single_kp))
    p_idx = np.array([p for p, _ in single_asg.pairs], dtype=np.int64)
    g_idx = np.array([g for _, g in single_asg.pairs], dtype=np.int64)
    single = _mean_dist(kp_s[p_idx], sample.single_kp[g_idx]).sum()

    kp1 = keypoints(b.closing, b.approach, b.translation, b.width, spec)
    kp2 = keypoints(b.closing2, b.approach2, b.translation2, b.width2, spec)
    straight, crossed = pair_cost_matrices(kp1.data, kp2.data, sample.pair_kp1, sample.pair_kp2)
    bi_asg = hungarian(np.minimum(straight, crossed))
    bp = np.array([p for p, _ in bi_asg.pairs], dtype=np.int64)
    bg = np.array([g for _, g in bi_asg.pairs], dtype=np.int64)
    swap = crossed[bp, bg] < straight[bp, bg]
    t1 = np.where(swap[:, None, None], sample.pair_kp2[bg], sample.pair_kp1[bg])
    t2 = np.where(swap[:, None, None], sample.pair_kp1[bg], sample.pair_kp2[bg])
    geo = _mean_dist(kp1[bp], t1) + _mean_dist(kp2[bp], t2)
    qual = (b.quality[bp] - sample.pair_quality[bg]).abs()
    bimanual = (geo + qual).sum()
    info = {"single": float(single.data), "bimanual": float(bimanual.data),
            "single_assignment": single_asg, "bimanual_assignment": bi_asg}
    return single + bimanual, info


def batch_loss(batch, cfg: ModelConfig, weights, spec: GripperSpec = GripperSpec()) -> Tensor:
    total = None
    for sample in batch:
        loss, _ = sample_loss(forward(sample.cloud, cfg, weights, spec), sample, spec)
        total = loss if total is None else total + loss
    return total / float(len(batch))


@dataclass
class AdamW:
    """Adam with decoupled weight decay."""

    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, weights: dict, lr: float):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in weights.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[name] = b1 * self.m.get(name, 0.0) + (1 - b1) * g
            v = self.v[name] = b2 * self.v.get(name, 0.0) + (1 - b2) * g * g
            p.data = p.data - lr * self.weight_decay * p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(batch, cfg: ModelConfig, weights: dict, optimizer: AdamW, lr: float = 5e-4,
               spec: GripperSpec = GripperSpec()) -> float:
    """Forward, backward and one optimizer update; returns the pre-update loss."""
    for p in weights.values():
        p.zero_grad()
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below, not as warnings
        loss = batch_loss(batch, cfg, weights, spec)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"loss became {value}")
        loss.backward()
    optimizer.step(weights, lr)
    return value

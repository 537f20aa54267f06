"""
Overfitting the toy network on one cube
=======================================

The full pipeline in miniature: ground truth from the pair matcher, a
transformer trained with Hungarian-matched losses, then inference. With one
object and 300 steps the network should memorize its targets.
"""
import time

import numpy as np

from bigrasp import data_path
from bigrasp.cli import training_samples
from bigrasp.net import AdamW, ModelConfig, forward, init_weights, model_forward, train_step
from bigrasp.net.train import sample_loss

cfg = ModelConfig.toy()
print(f"toy config: N={cfg.n_points} points, {cfg.n_centers} centers, C={cfg.embed_dim}, "
      f"{cfg.single_queries} single / {cfg.bimanual_queries} pair queries")

samples = training_samples([data_path("cube.obj")], cfg, k=8, seed=0, mu=0.5)
s = samples[0]
print(f"targets: {len(s.single_kp)} single grasps, {len(s.pair_kp1)} pairs, "
      f"qualities {np.round(np.sort(s.pair_quality)[::-1], 3)}")

weights = init_weights(cfg)
opt = AdamW()
t = time.perf_counter()
losses = []
for step in range(300):
    losses.append(train_step(samples, cfg, weights, opt, lr=5e-4))
    if step % 50 == 0:
        print(f"step {step:3d}  loss {losses[-1]:.4f}")
print(f"final {losses[-1]:.4f} = {losses[-1] / losses[0]:.1%} of initial in {time.perf_counter() - t:.1f} s")

# %% where the loss went: single vs pair terms
_, info = sample_loss(forward(s.cloud, cfg, weights), s)
print(f"single term {info['single']:.4f}, pair term {info['bimanual']:.4f}")

# %% inference on the training cloud; memorized pairs should score near their targets
_, pairs = model_forward(s.cloud, cfg, weights)
print("predicted qualities (top 5):", np.round(sorted((p.quality for p in pairs), reverse=True)[:5], 3))

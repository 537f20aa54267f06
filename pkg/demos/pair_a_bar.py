"""
Ground-truth bimanual pairs on a long bar
=========================================

Sample antipodal single grasps, match each with its best collision-free
partner, and see how the three quality terms trade off. A long bar is where
two hands matter: pairs that straddle the center of mass balance torque best.
"""
import numpy as np

from bigrasp import data_path
from bigrasp.geometry import sample_surface_points
from bigrasp.io import load_obj
from bigrasp.matcher import bpm_match
from bigrasp.metrics import diversity, rank_pairs, top_fraction
from bigrasp.rng import stream
from bigrasp.sampler import sample_grid_grasps

bar = load_obj(data_path("bar.obj"))
print(f"bar: {len(bar.triangles)} triangles, extent {bar.scale:.2f} m, com {np.round(bar.center_of_mass, 4)}")

# %% single grasps: oversampled, then thinned on a pose grid
singles = sample_grid_grasps(bar, k=32, seed=stream(0, "sampler"))
print(f"{len(singles)} single grasps")

# %% every grasp gets its best partner
pairs = rank_pairs(bpm_match(singles, bar))
print(f"{len(pairs)} pairs; quality range {pairs[-1].quality:.3f} .. {pairs[0].quality:.3f}")
print("   q     eps      balance  dexterity  hand separation (m)")
for p in pairs[:8]:
    b = p.breakdown
    sep = np.linalg.norm(p.g1.translation - p.g2.translation)
    print(f"{p.quality:.3f}  {b.epsilon:.5f}  {b.torque_balance:.4f}   {b.dexterity:.4f}     {sep:.3f}")

# %% the best pairs should spread along the bar, not crowd one end
cloud = sample_surface_points(bar, 2048, stream(0, "diversity"))
for f in (0.3, 0.5, 1.0):
    top = top_fraction(pairs, f)
    print(f"top {f:.0%}: {len(top):2d} pairs cover {diversity(cloud, top):5.1f}% of the surface")

"""
How pair queries read the single-grasp features
===============================================

Single-guided attention has no learned projections: pair queries score
single-grasp features by scaled dot product and take the weighted average.
A query aligned with one feature pulls mostly that feature; a zero query
averages all of them.
"""
import numpy as np

from bigrasp.net import Tensor, sgb_attention

rng = np.random.default_rng(0)
F = rng.standard_normal((5, 8))  # five single-grasp features

queries = np.vstack([np.zeros(8), 3 * F[2], -3 * F[2], F[0] + F[4]])
out, A = sgb_attention(Tensor(queries), Tensor(F), return_weights=True)
np.set_printoptions(precision=3, suppress=True)
for name, row in zip(["zero", "+3 F2", "-3 F2", "F0+F4"], A.data):
    print(f"{name:>6}: {row}  (sum {row.sum():.15f})")

print("zero query output equals the mean feature:", np.allclose(out.data[0], F.mean(axis=0)))

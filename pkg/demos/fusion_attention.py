"""Adaptive weights in the Bayesian fusion step.

Two metrics watch one block.  The first stays at half its limit while the
second climbs through its own.  Adaptive weights shift attention to the
metric that is over its limit, so the fused probability rises faster than
with equal weights.

    python3 demos/fusion_attention.py
"""

import numpy as np

from blockwatch import fusion

ALPHA = 0.01
limits = np.array([10.0, 4.0])

print(" ratio  w_T2   w_W    B(adaptive)  B(equal)")
for ratio in np.linspace(0.5, 2.0, 7):
    v = np.array([0.5 * limits[0], ratio * limits[1]])
    B, w, _ = fusion.wbf(v, limits, ALPHA)
    B_eq, _, _ = fusion.wbf(v, limits, ALPHA, adaptive=False)
    flag = "alarm" if B > ALPHA else ""
    print(f" {ratio:4.2f}  {w[0]:.3f}  {w[1]:.3f}  {B:.6f}     {B_eq:.6f}  {flag}")

# block level: same functional form over block statistics and their limits
blocks = [(0.004, 0.02), (0.05, 0.02), (0.01, 0.02), (0.015, 0.02)]
plant = fusion.fuse_plant(blocks, ALPHA)
print(f"\nPFI {plant.PFI:.4f}, block weights {np.round(plant.weights, 3)}, alarm {plant.alarm}")

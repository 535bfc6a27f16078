"""Two affine contractions of the line, their covering certificate, and a point of the unstable set.

Run: python demos/blender_1d.py
"""

import numpy as np

from skewblend import FiberMap, HorizontalDisc, Region, SkewSystem, TruncatedSequence
from skewblend import refine_intersection, verify_covering, verify_lambda_u

maps = (FiberMap.affine([[2 / 3]], [-1 / 3]), FiberMap.affine([[2 / 3]], [1 / 3]))
sys = SkewSystem(maps, nu=0.5, alpha=1.0, gamma=0.6, gamma_hat=0.6)
B, D = Region.interval(-0.9, 0.9), Region.interval(-1, 1)

print("constants:", sys.verify_constants().phs_slacks)

# the two images (-14/15, 4/15) and (-4/15, 14/15) cover [-0.9, 0.9] with room to spare
for h in (0.05, 0.01, 0.001):
    cert = verify_covering(sys, [1, 2], B, D, h)
    print(f"h={h:<6} L >= {cert.lebesgue_lower:.5f}  delta_max = {cert.delta_max:.5f}  "
          f"grid points = {cert.grid_points}")

# widening B to the whole of D breaks the cover at the endpoints
try:
    verify_covering(sys, [1, 2], Region.interval(-1, 1), Region.interval(-1.5, 1.5), 0.01)
except Exception as exc:
    print("B = (-1, 1):", exc, exc.witness)

# a constant disc at height 0.2 and its nested refinement
disc = HorizontalDisc.constant(TruncatedSequence((), (1,) * 4), [0.2], 0.1)
trace = refine_intersection(cert, disc, 12)
print("past word (newest first):", trace.chosen)
for s in trace.steps[:4]:
    print(f"  n={s.n} block={s.block} pulled-back center={s.center_A[0]:+.4f} depth margin={s.depth_margin:.4f}")
rep = verify_lambda_u(sys, (trace.sequence, trace.point), B, 12)
print("backward orbit stays in B:", rep.ok, "margin", round(rep.margin, 5))
print("orbit:", np.round(sys.backward_orbit(trace.sequence, 12, trace.point)[:, 0], 3))

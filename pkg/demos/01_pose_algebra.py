"""Pose algebra basics: exp/log, composition, geodesic interpolation.

Run: python demos/01_pose_algebra.py
"""

import numpy as np

from poseservo import geometry as geom
from poseservo.geometry import Pose, Twist

rng = np.random.default_rng(0)

# A twist is (linear, angular); exp maps it to a pose, log inverts exactly.
xi = Twist(rng.normal(size=3), 0.8 * rng.normal(size=3))
T = geom.exp(xi)
back = geom.log(T)
print("twist      :", np.round(xi.as_array(), 4))
print("log(exp(.)):", np.round(back.as_array(), 4))

# Composition chains reference frames; inverse undoes it.
A = geom.exp(Twist(rng.normal(size=3), rng.normal(size=3)))
B = geom.exp(Twist(rng.normal(size=3), rng.normal(size=3)))
AB = geom.compose(A, B)
ident = geom.compose(geom.inverse(AB), AB)
t_err, r_err = geom.pose_distance(ident, Pose.identity())
print(f"compose/inverse identity error: trans {t_err:.2e} m, rot {r_err:.2e} rad")

# Geodesic interpolation: alpha sweeps the shortest path from A to B.
for alpha in (0.0, 0.25, 0.5, 1.0):
    P = geom.interpolate(A, B, alpha)
    da = geom.pose_distance(P, A)[1]
    db = geom.pose_distance(P, B)[1]
    print(f"alpha={alpha:.2f}: rotation {np.degrees(da):6.2f} deg from A, "
          f"{np.degrees(db):6.2f} deg from B")

# Text round trip used in all CSV logs.
print("pose text:", geom.pose_to_text(A))

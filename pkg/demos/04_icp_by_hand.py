"""
ICP on a synthetic cloud
========================

Point-to-point ICP with a voxel-grid nearest-neighbour index, compared with
the closed-form Kabsch fit it repeats at every step.
"""

import numpy as np

from reflectpriv.geom import RigidTransform, compose, invert, rotation_about_axis, rotation_angle
from reflectpriv.pointcloud import IcpParams, icp_register, kabsch

rng = np.random.default_rng(1)

# three bumpy orthogonal patches, like the corner of a room
k = 2000
u, v = rng.uniform(0, 1, (3, k)), rng.uniform(0, 1, (3, k))
p = np.concatenate([
    np.stack([u[0] * 1.2, v[0] * 0.9, 0.03 * np.sin(6 * u[0]) * np.cos(5 * v[0])], 1),
    np.stack([0.03 * np.sin(7 * v[1]), u[1] * 0.9, v[1] * 0.7], 1),
    np.stack([u[2] * 1.2, 0.03 * np.cos(9 * u[2] + 4 * v[2]), v[2] * 0.7], 1),
])
p -= p.mean(axis=0)

truth = RigidTransform(rotation_about_axis((0.2, 1.0, -0.4), np.deg2rad(8.0)), (0.12, -0.05, 0.09))
q = truth.apply(p)

# with known correspondences one Kabsch step is exact
print(np.abs(kabsch(p, q).matrix() - truth.matrix()).max())

# ICP has to find the correspondences itself
est = icp_register(p, q, IcpParams(max_iter=50))
err = compose(invert(truth), est)
print("rotation error %.2e deg" % np.rad2deg(rotation_angle(err.rotation)))
print("translation error %.2e m" % np.linalg.norm(err.translation))
print("rigid:", est.is_rigid(1e-9))

# too few overlapping points is reported, not guessed
try:
    icp_register(p[:200], q[:200] + 5.0)
except Exception as e:
    print(type(e).__name__, e)

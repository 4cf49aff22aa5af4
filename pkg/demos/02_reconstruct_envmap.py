"""
Reconstructing lighting from RGB-D frames
=========================================

Frames are unprojected into one point cloud (every point remembers the frame
and depth pixel it came from), registered with ICP against what has been
accumulated so far, and splatted into a cubemap around the anchor where a
virtual object will sit.
"""

from pathlib import Path

import numpy as np

from reflectpriv import envmap, scene, sessionio
from reflectpriv.geom import rotation_angle
from reflectpriv.pointcloud import fuse

out = Path("demo_out")

sc, traj = scene.make_default_suite()[0]
frames = scene.capture(sc, traj)

res = fuse(frames, scene.ANCHOR)
cloud = res.cloud
print(len(cloud), "points after fusion")
print("provenance unique:", cloud.provenance_unique())
print("skipped frames:", res.skipped)

# ICP corrections on noiseless frames should be close to identity
for k, t in sorted(res.corrections.items()):
    print(k, "%.4f deg" % np.rad2deg(rotation_angle(t.rotation)), "%.2f mm" % (1000 * np.linalg.norm(t.translation)))

# near field splat, hole fill, then the procedural far field
sp = envmap.splat_near_field(cloud, 256, scene.ANCHOR, 0.01)
print("texels covered by geometry: %.3f" % sp.is_set.mean())
sp = envmap.fill_gaps(sp, 1)
print("after gap fill: %.3f" % sp.is_set.mean())
cm = envmap.fill_far_field(sp, "procedural")

sessionio.write_cubemap(cm, out / "envmap.rgcm")
sessionio.write_png(out / "envmap.png", sessionio.cubemap_preview(cm))

# roughness levels for rendering
levels = envmap.prefilter(cm, 8)
for i, lv in enumerate(levels):
    print(i, lv.resolution, np.round(lv.faces.mean(axis=(0, 1, 2)), 3))

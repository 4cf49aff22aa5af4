"""
Plaques, capture and detection
==============================

A sensitive item in the synthetic rooms is a plaque: a 20x20 cell glyph
carrying a short payload and a kind (FACE or TEXT). This walks through
encoding one, placing the default suite, capturing RGB-D frames and running
the built-in detector on them.
"""

from pathlib import Path

import numpy as np

from reflectpriv import glyph, scene, sessionio
from reflectpriv.detect import BuiltinDetector

out = Path("demo_out")

# encode and decode a glyph directly
bits = glyph.encode_plaque("ROOM 214", "TEXT")
print(bits.shape, bits.dtype)
print(glyph.decode(bits))

# any rotation or flip of the grid still decodes
for g in glyph.dihedral(bits):
    print(glyph.decode_grid(g)[:2])

# a few damaged cells are corrected
bad = bits.copy()
bad[5, 5:9] ^= True
print(glyph.decode_grid(bad))

sessionio.write_png(out / "glyph.png", np.repeat(glyph.render_cells(bits, 12)[..., None], 3, axis=2))

# the default suite: four rooms, each with its own trajectory
suite = scene.make_default_suite()
for sc, traj in suite:
    print(sc.name, len(sc.plaques), "plaques,", len(traj.poses), "poses")

sc, traj = suite[0]
for p in sc.plaques:
    print(p.kind.value, repr(p.payload), np.round(p.placement.translation, 2))

# capture is noiseless and deterministic by default
frames = scene.capture(sc, traj)
f = frames[0]
print(f.rgb.shape, f.depth.shape, f.scale)
print("depth range", f.depth[f.depth > 0].min(), f.depth.max())
sessionio.write_png(out / "frame0.png", f.rgb)

# run the detector on every frame
det = BuiltinDetector()
for f in frames:
    regions = det(f.frame_id, f.rgb)
    print(f.frame_id, [(r.kind.value, r.payload, r.bbox) for r in regions])

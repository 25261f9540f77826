"""Which object sizes and positions can the three fingertips hold?

Random actuator strokes give three fingertip contacts; the circle through
them is an object the gripper could hold. The spread of those circumradii,
and where their centres fall, is the gripper's workspace.
"""

import numpy as np

from finray.kinematics import LinkageGeometry
from finray.workspace import (WorkspaceSampleSet, dexterity_map, histogram_support, radius_histogram,
                              sample_workspace, translation_range)

geo = LinkageGeometry()
runs = {m: sample_workspace(geo, m, 100_000, seed=0) for m in (1, 2, 3)}
names = {1: "parallel", 2: "trigonal", 3: "T-shaped"}

for m, s in runs.items():
    lo, hi = histogram_support(radius_histogram(s))
    print(f"{names[m]:<9} {len(s):6d} valid samples, bulk of radii in {lo:g}-{hi:g} mm, "
          f"median {np.median(s.radius):.1f} mm")

pooled = WorkspaceSampleSet.concat([runs[2], runs[3]])
r = pooled.radius
print(f"\nmodes 2 and 3 pooled: {np.mean((r >= 20) & (r <= 80)):.1%} of radii in 20-80 mm")

for band in ((30, 40), (60, 70), (60, 80), (80, 100)):
    dmap = dexterity_map(pooled, band)
    dx = translation_range(pooled, band)["delta_x_max"]
    print(f"  {band[0]}-{band[1]} mm: {dmap.n_points:6d} samples, {dmap.region_count} high-density region(s), "
          f"in-hand translation up to {dx:.1f} mm")

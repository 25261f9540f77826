"""Two slip controllers unscrewing a bottle cap, then a pick-and-hold benchmark.

Both controllers start with a light grip and add half a newton each time they
decide the object is slipping. The threshold controller compares the summed
force with the calibrated f_min; the graph controller uses the trained
classifier. The simulated plant does not know which one is in charge.
"""

import numpy as np

from finray import control
from finray.slipnet import generate_dataset, train
from finray.tactile import TraceSpec, calibrate_threshold, generate_trace

spec = TraceSpec()
ctls = {
    "threshold": control.ThresholdController(calibrate_threshold(generate_trace(spec))),
    "gcn": control.GcnController(train(generate_dataset(spec, 2100, 700, seed=0)[0])["params"]),
}

print("cap removal, 50 seeded episodes each")
for name, ctl in ctls.items():
    rs = [control.run_episode(control.Scenario.cap_removal(), ctl, None, s, keep_frames=False) for s in range(50)]
    print(f"  {name:<9} success {np.mean([r.success for r in rs]):.0%}, "
          f"mean contact force {np.mean([r.mean_contact_force for r in rs]):.2f} N, "
          f"mean regrasps {np.mean([r.regrasps for r in rs]):.1f}")

r = control.run_episode(control.Scenario.cap_removal(), ctls["gcn"], None, 0)
print(f"\none episode: {r.iterations} steps, phases {' '.join(p.value for p in dict.fromkeys(r.phases))}")

rows = control.run_benchmark(control.default_catalog(), ctls, 10, seed=0)
print("\npick-and-hold over the 15-object catalog, best mode per object:")
for name in ctls:
    print(f"  {name:<9} {control.overall_success(rows, name):.0%}")
small = [x for x in rows if x["object"] == "Bottle 3" and x["mode"] == 2]
print("smallest bottle in trigonal mode:", {x["controller"]: x["success_rate"] for x in small})

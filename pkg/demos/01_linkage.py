"""How far does the finger swing for each millimetre of actuator travel?

The four-bar linkage turns the linear actuator stroke into a finger angle.
The map is not linear in closed form, yet over the working stroke a straight
line explains almost all of it, which is what lets a controller treat
travel as a proxy for finger angle.
"""

import numpy as np

from finray.kinematics import GripperConfiguration, LinkageGeometry, fingertip_position, fit_linear_map, solve_theta

geo = LinkageGeometry()
lo, hi = geo.actuator_travel
print(f"actuator travel {lo:g} .. {hi:g} mm")

for y in np.linspace(lo, hi, 7):
    print(f"  y = {y:6.1f} mm  ->  theta = {np.degrees(solve_theta(geo, y)):7.2f} deg")

fit = fit_linear_map(geo)
print(f"\nleast-squares line: theta = {fit['slope']:.5f} rad/mm * y + {fit['intercept']:.4f} rad")
print(f"R^2 = {fit['r_squared']:.5f}")
resid = np.degrees(fit["theta"] - (fit["slope"] * fit["y"] + fit["intercept"]))
print(f"worst residual {np.abs(resid).max():.3f} deg")

# the same stroke seen at the fingertips of a trigonal gripper
cfg = GripperConfiguration.from_mode(geo, 2, ys=0.0)
print("\ntrigonal mode, mid stroke, fingertip positions (mm):")
for i in range(3):
    print("  ", np.round(fingertip_position(cfg, i).position, 2))

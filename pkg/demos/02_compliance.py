"""A Fin Ray finger wrapping around three object profiles.

The finger is a chain of rigid segments held by torsional springs and braced
by ribs. Each object is pressed in by bending the base, and the quasi-static
shape minimises the spring energy plus a contact penalty. Curved objects
seat along the flank without forcing the ribs far, so they deform the finger
least and push back least.
"""

import numpy as np

from finray.compliance import FinRayModel, contact_force_profile, place_object, solve_equilibrium

model = FinRayModel()
print(f"{model.n_segments} segments, {model.rib_count} ribs, nominal base bend {model.nominal_actuation} rad\n")

print(f"{'object':<10} {'deformation mm':>15} {'force N':>9} {'contacts':>9}")
for shape in ("circle", "square", "rectangle"):
    r = solve_equilibrium(model, place_object(model, shape, 15.0), model.nominal_actuation)
    print(f"{shape:<10} {r.max_deformation:15.2f} {r.total_contact_force:9.2f} {r.contact_point_count:9d}")

print("\nramping the base bend against the circle:")
schedule = np.linspace(0.03, model.nominal_actuation, 5)
for a, r in zip(schedule, contact_force_profile(model, place_object(model, "circle", 15.0), schedule)):
    print(f"  {a:.3f} rad  ->  {r.total_contact_force:5.2f} N, {r.max_deformation:5.2f} mm")

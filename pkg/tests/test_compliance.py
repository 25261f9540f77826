import numpy as np
import pytest

from finray.compliance import (
    FinRayModel,
    ObjectPrimitive,
    Shape,
    contact_force_profile,
    place_object,
    rest_nodes,
    solve_equilibrium,
    with_params,
)
from finray.errors import InvalidPlacement, NonConvergence

M = FinRayModel()
A = M.nominal_actuation

# Frozen at nominal actuation, 15 mm objects placed 1 mm off the front beam.
FROZEN = {
    "circle": (5.520238859810361, 4.353931511735354),
    "square": (7.17424586986099, 4.803859312696446),
    "rectangle": (11.192315311919854, 5.746474383274247),
}


@pytest.fixture(scope="module")
def nominal():
    return {s: solve_equilibrium(M, place_object(M, s, 15.0), A) for s in FROZEN}


def test_rest_equilibrium_is_untouched():
    r = solve_equilibrium(M, place_object(M, "circle", 15.0), 0.0)
    assert r.max_deformation == 0.0
    assert r.total_contact_force == 0.0
    assert r.contact_point_count == 0


def test_circle_deforms_least(nominal):
    d = {s: r.max_deformation for s, r in nominal.items()}
    assert d["circle"] < d["square"] and d["circle"] < d["rectangle"]


def test_circle_pushes_least(nominal):
    f = {s: r.total_contact_force for s, r in nominal.items()}
    assert f["circle"] < f["square"] and f["circle"] < f["rectangle"]


def test_frozen_values(nominal):
    for s, (d, f) in FROZEN.items():
        assert nominal[s].max_deformation == pytest.approx(d, rel=1e-6)
        assert nominal[s].total_contact_force == pytest.approx(f, rel=1e-6)


def test_circle_deformation_in_calibrated_band(nominal):
    assert 5.0 <= nominal["circle"].max_deformation <= 10.0


def test_converged_results(nominal):
    for r in nominal.values():
        assert r.converged
        assert r.max_penetration <= 5.0 / M.contact_penalty


def test_energy_never_increases(nominal):
    for r in nominal.values():
        e = np.array(r.energy_history)
        assert np.all(np.diff(e) <= 1e-9 * np.maximum(1.0, np.abs(e[:-1])))


def test_tip_load_linear_regime():
    small = solve_equilibrium(M, None, 0.0, tip_load=(-0.05, 0.0)).max_deformation
    double = solve_equilibrium(M, None, 0.0, tip_load=(-0.10, 0.0)).max_deformation
    assert double / small == pytest.approx(2.0, rel=0.05)


def test_constant_schedule_idempotent():
    obj = place_object(M, "circle", 15.0)
    rs = contact_force_profile(M, obj, [A, A, A])
    for r in rs[1:]:
        assert abs(r.max_deformation - rs[0].max_deformation) <= 1e-9
        assert abs(r.total_contact_force - rs[0].total_contact_force) <= 1e-9


def test_increasing_schedule_force_non_decreasing():
    obj = place_object(M, "circle", 15.0)
    rs = contact_force_profile(M, obj, np.linspace(0.0, 0.2, 5))
    f = [r.total_contact_force for r in rs]
    assert all(b >= a - 1e-9 for a, b in zip(f, f[1:]))
    assert f[-1] > 0


def test_profile_circle_below_square_at_final_step():
    sched = np.linspace(0.0, A, 4)
    c = contact_force_profile(M, place_object(M, "circle", 15.0), sched)[-1]
    s = contact_force_profile(M, place_object(M, "square", 15.0), sched)[-1]
    assert c.total_contact_force < s.total_contact_force


def test_no_contact_means_no_force():
    r = solve_equilibrium(M, None, 0.1)
    assert r.contact_point_count == 0 and r.total_contact_force == 0.0


def test_centred_circle_gives_symmetric_shape():
    # tip pushed up into a circle sitting on the symmetry axis
    rest = rest_nodes(M)
    h = M.rest_shape[1]
    obj = ObjectPrimitive(Shape.CIRCLE, 10.0, (0.0, h + 10.05))
    r = solve_equilibrium(M, obj, 0.0, tip_load=(0.0, 8.0))
    assert r.contact_point_count > 0
    mirror = rest * [-1.0, 1.0]
    partner = np.linalg.norm(mirror[:, None] - rest[None], axis=2).argmin(axis=1)
    x = r.nodes
    assert np.max(np.abs(x[partner] * [-1.0, 1.0] - x)) <= 1e-6


def test_penetrating_placement_rejected():
    obj = ObjectPrimitive(Shape.CIRCLE, 10.0, (0.0, 40.0))
    with pytest.raises(InvalidPlacement):
        solve_equilibrium(M, obj, 0.1)


def test_iteration_cap():
    m = with_params(M, max_iter=3)
    with pytest.raises(NonConvergence):
        solve_equilibrium(m, place_object(m, "circle", 15.0), A)
    r = solve_equilibrium(m, place_object(m, "circle", 15.0), A, raise_on_cap=False)
    assert not r.converged and r.iterations == 3


def test_parameter_validation():
    with pytest.raises(ValueError):
        FinRayModel(n_segments=2)
    with pytest.raises(ValueError):
        FinRayModel(rib_stiffness=0.0)
    with pytest.raises(ValueError):
        solve_equilibrium(M, None, -0.1)


def test_shape_aliases():
    assert Shape.parse("sphere") is Shape.CIRCLE
    assert Shape.parse("cube") is Shape.SQUARE
    assert Shape.parse("cylinder") is Shape.RECTANGLE


def test_model_dict_round_trip():
    assert FinRayModel.from_dict(M.to_dict()) == M

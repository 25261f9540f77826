import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finray import workspace as ws
from finray.errors import DegenerateTriangle, EmptyBand, EmptyInput

# Frozen from the seed-0, 100k-per-mode runs.
POOLED_IN_20_80 = 0.92776
POOLED_BELOW_10 = 0.00552
POOLED_ABOVE_125 = 0.003325
DX_30_40 = 71.88542081922775
DX_60_70 = 97.15052002548046


def test_equilateral_circumradius():
    s = 30.0
    p = [[0, 0, 0], [s, 0, 0], [s / 2, s * np.sqrt(3) / 2, 0]]
    r, c = ws.circumradius(*p)
    assert r == pytest.approx(s / np.sqrt(3), abs=1e-12)


def test_right_triangle_circumradius():
    r, c = ws.circumradius([0, 0, 0], [3, 0, 0], [0, 4, 0])
    assert r == pytest.approx(2.5, abs=1e-12)
    np.testing.assert_allclose(c, [1.5, 2.0, 0.0], atol=1e-12)


def test_collinear_is_degenerate():
    with pytest.raises(DegenerateTriangle):
        ws.circumradius([0, 0, 0], [1, 1, 1], [2, 2, 2])


tri = st.lists(st.floats(-100, 100, allow_nan=False), min_size=9, max_size=9)


@settings(max_examples=200, deadline=None)
@given(tri, st.sampled_from([0.5, 2.0, 10.0]))
def test_circumradius_scale_and_equidistance(v, k):
    p = np.array(v).reshape(3, 3)
    area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
    lens = [np.linalg.norm(p[i] - p[j]) for i, j in ((0, 1), (1, 2), (0, 2))]
    if area < 1e-2 * max(lens) ** 2 or min(lens) < 1e-3:
        return  # near-degenerate: conditioning, not correctness
    r, c = ws.circumradius(*p)
    d = np.linalg.norm(p - c, axis=1)
    assert np.max(np.abs(d - r)) <= 1e-6 * max(1.0, r)
    rk, _ = ws.circumradius(*(k * p))
    assert rk == pytest.approx(k * r, rel=1e-9)


def test_sampling_is_deterministic_and_thread_independent(geometry):
    a = ws.sample_workspace(geometry, 2, 10_000, seed=5)
    b = ws.sample_workspace(geometry, 2, 10_000, seed=5, threads=4)
    assert a.radius.tobytes() == b.radius.tobytes()
    assert a.contact_points.tobytes() == b.contact_points.tobytes()
    c = ws.sample_workspace(geometry, 2, 10_000, seed=6)
    assert a.radius.tobytes() != c.radius.tobytes()


def test_equal_fingers_trigonal_is_equilateral(geometry):
    s = ws.sample_workspace(geometry, 2, 2000, seed=1, equal_fingers=True)
    p = s.contact_points
    sides = np.stack([np.linalg.norm(p[:, i] - p[:, (i + 1) % 3], axis=1) for i in range(3)], axis=1)
    assert np.max(sides.max(axis=1) - sides.min(axis=1)) < 1e-6


def test_sample_objects(geometry):
    s = ws.sample_workspace(geometry, 3, 50, seed=2)
    smp = s[0]
    assert len(smp.contact_points) == 3
    d = [np.linalg.norm(q - smp.circumcenter) for q in smp.contact_points]
    assert max(d) - min(d) < 1e-6
    assert smp.configuration.mode == 3
    assert len(list(s)) == len(s) == s.n_drawn - s.n_degenerate


def test_concentration_modes_2_and_3(ws_runs):
    r = np.concatenate([ws_runs[2].radius, ws_runs[3].radius])
    inside = np.mean((r >= 20) & (r <= 80))
    assert inside >= 0.80
    assert np.mean(r < 10) < 0.01 and np.mean(r > 125) < 0.01
    assert inside == pytest.approx(POOLED_IN_20_80, abs=1e-12)
    assert np.mean(r < 10) == pytest.approx(POOLED_BELOW_10, abs=1e-12)
    assert np.mean(r > 125) == pytest.approx(POOLED_ABOVE_125, abs=1e-12)


def test_parallel_mode_favours_smaller_objects(ws_runs, ws_pooled):
    assert ws.radius_histogram(ws_runs[1]).mean() < ws.radius_histogram(ws_pooled).mean()


def test_histogram_edge_cases():
    h = ws.radius_histogram([], 10.0)
    assert h.total == 0 and np.all(h.counts == 0)
    h = ws.radius_histogram([25.0], 10.0)
    assert np.count_nonzero(h.counts) == 1 and h.counts.sum() == 1
    assert np.all(np.diff(h.bin_edges) > 0)
    with pytest.raises(ValueError):
        ws.radius_histogram([1.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 400, allow_nan=False), max_size=200), st.floats(0.5, 50))
def test_histogram_conserves_counts(radii, width):
    assert ws.radius_histogram(radii, width).total == len(radii)


def test_histogram_support_per_mode(ws_runs):
    sup = {m: ws.histogram_support(ws.radius_histogram(ws_runs[m])) for m in (1, 2, 3)}
    assert sup == {1: (10.0, 60.0), 2: (20.0, 70.0), 3: (30.0, 75.0)}


def test_kde_single_point_peak():
    g = ws.GridSpec((-30.0, -30.0), 1.0, (61, 61))
    d = ws.kde_density([[0.0, 0.0]], 5.0, g)
    assert d.values[30, 30] == pytest.approx(1 / (2 * np.pi * 25), rel=1e-12)


def test_kde_normalisation(rng):
    pts = rng.normal(0, 4, size=(200, 2))
    d = ws.kde_density(pts, 3.0, ws.GridSpec.covering(pts, 6 * 3.0, 0.5))
    assert d.mass() == pytest.approx(1.0, abs=0.02)
    assert np.all(d.values >= 0)


def test_kde_duplicate_points_match_single():
    g = ws.GridSpec((-10.0, -10.0), 1.0, (21, 21))
    one = ws.kde_density([[1.0, 2.0]], 2.0, g).values
    two = ws.kde_density([[1.0, 2.0], [1.0, 2.0]], 2.0, g).values
    np.testing.assert_allclose(one, two, rtol=1e-14)


def test_kde_empty():
    with pytest.raises(EmptyInput):
        ws.kde_density(np.zeros((0, 2)), 1.0)


def _clusters(rng, sep):
    n = 2000
    centers = np.concatenate([rng.normal([-sep, 0], 3, size=(n, 2)), rng.normal([sep, 0], 3, size=(n, 2))])
    k = len(centers)
    return ws.WorkspaceSampleSet(
        2, None, np.zeros((k, 3)), np.zeros((k, 2)), np.zeros((k, 3, 3)),
        np.full(k, 50.0), np.column_stack([centers, np.zeros(k)]), k, 0)


def test_two_separated_clusters_give_two_regions(rng):
    assert ws.dexterity_map(_clusters(rng, 40.0), (40, 60), 0.5).region_count == 2


def test_dexterity_60_80_single_region(ws_pooled):
    assert ws.dexterity_map(ws_pooled, (60, 80)).region_count == 1


@pytest.mark.xfail(strict=True, reason="default geometry gives one region in the 80-100 mm band; see ledger")
def test_dexterity_80_100_two_regions(ws_pooled):
    assert ws.dexterity_map(ws_pooled, (80, 100)).region_count == 2


def test_dexterity_errors(ws_pooled):
    with pytest.raises(EmptyBand):
        ws.dexterity_map(ws_pooled, (-20, -10))
    with pytest.raises(ValueError):
        ws.dexterity_map(ws_pooled, (80, 60))


def test_translation_60_70_within_bound(ws_pooled):
    dx = ws.translation_range(ws_pooled, (60, 70))["delta_x_max"]
    assert dx <= 100.0
    assert dx == pytest.approx(DX_60_70, rel=1e-9)


def test_translation_30_40_frozen(ws_pooled):
    assert ws.translation_range(ws_pooled, (30, 40))["delta_x_max"] == pytest.approx(DX_30_40, rel=1e-9)


@pytest.mark.xfail(strict=True, reason="30-40 mm band reaches 71.9 mm, short of the 74 mm reference; see ledger")
def test_translation_30_40_in_reference_range(ws_pooled):
    assert 74.0 <= ws.translation_range(ws_pooled, (30, 40))["delta_x_max"] <= 90.0


def test_single_sample_band_has_no_translation(ws_pooled):
    one = ws_pooled.select(np.arange(len(ws_pooled)) == 0)
    r = float(one.radius[0])
    assert ws.translation_range(one, (r - 1, r + 1))["delta_x_max"] == 0.0

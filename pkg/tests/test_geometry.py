import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polystab.errors import (DistanceTooLarge, GeometryFormatError, InvalidAprioriData, InvalidBackground,
                             InvalidPolygon, VertexCountMismatch, VertexOnInterface)
from polystab.geometry import (AprioriData, LayeredBackground, Polygon, gamma_gap_integrals,
                               hausdorff_distance, interface_crossings, match_vertices,
                               merge_interface_kinks, moved_polygon, random_admissible_polygon,
                               random_nearby_polygon, rectangle, regular_polygon, scene_from_dict,
                               symmetric_difference_area, validate_polygon)


def test_apriori_constants_match_closed_forms(apriori45):
    a = apriori45
    assert a.delta0 == pytest.approx(min(a.K0 * a.r0, a.d0 * math.sin(a.beta0) / 16), rel=1e-15)
    assert a.C0 == pytest.approx(math.sqrt(1 + 16 / math.sin(a.beta0) ** 2), rel=1e-15)
    # beta0 = pi/2: C0 = sqrt(17)
    b = AprioriData(N0=4, d0=0.4, r0=1.0, K0=1.0, L=1.0, beta0=math.pi / 2, c0=1.0, k=3.0, m=1)
    assert b.C0 == pytest.approx(math.sqrt(17.0))
    assert b.delta0 == pytest.approx(0.025)


@pytest.mark.parametrize("bad", [dict(N0=2), dict(d0=-1.0), dict(beta0=2.0), dict(d0=1.5), dict(m=0)])
def test_apriori_rejects_invalid(bad):
    vals = dict(N0=6, d0=0.4, r0=0.4, K0=1.0, L=1.0, beta0=1.0, c0=1.0, k=3.0, m=2)
    vals.update(bad)
    with pytest.raises(InvalidAprioriData):
        AprioriData(**vals)


@pytest.mark.parametrize("om,ga", [((-1, 0, 0.5), (1, 2)), ((-1, 0.2, 0.1, 1), (1, 2, 3)),
                                   ((-1, 1), (1, 2)), ((-1, 0, 1), (1, -2))])
def test_background_rejects_invalid(om, ga):
    with pytest.raises(InvalidBackground):
        LayeredBackground(1.0, om, ga)


def test_layer_lookup(bg):
    assert list(bg.gamma_at([[0, -0.5], [0, 0.5], [0.3, 0.0]])) == [1.0, 2.0, 2.0]
    assert bg.interfaces == (0.0,)


def test_polygon_orientation_and_area():
    cw = Polygon([[0, 0], [0, 1], [1, 1], [1, 0]])
    assert cw.area() == pytest.approx(1.0)
    assert np.allclose(cw.angles(), np.pi / 2)
    with pytest.raises(InvalidPolygon):
        Polygon([[0, 0], [1, 1]])
    with pytest.raises(InvalidPolygon):
        Polygon([[0, 0], [1, np.nan], [1, 1]])
    bow = Polygon([[0, 0], [1, 1], [1, 0], [0, 1]])
    assert not bow.is_simple()


def test_outward_normals_of_square(square):
    n = square.outward_normals()
    mid = 0.5 * (square.seg_a + square.seg_b)
    assert np.all(np.einsum("ij,ij->i", n, mid) > 0)


def test_validate_reports_each_violation(bg, apriori, square):
    assert validate_polygon(square, bg, apriori).ok
    small = rectangle(-0.1, 0.25, 0.1, 0.45)
    assert "SideTooShort" in validate_polygon(small, bg, apriori).violations()
    near_if = rectangle(-0.3, 0.1, 0.3, 0.55)
    assert "VertexNearInterface" in validate_polygon(near_if, bg, apriori).violations()
    near_bd = rectangle(-0.3, 0.25, 0.7, 0.7)
    assert "TooCloseToBoundary" in validate_polygon(near_bd, bg, apriori).violations()
    hexagon = regular_polygon(6, (0, 0.0), 0.45, 0.1)
    rep = validate_polygon(hexagon, bg, apriori)
    assert "AngleViolation" in rep.violations()
    assert rep["side_count"].passed


def test_interface_kinks_are_merged(bg, square):
    q = moved_polygon(match_vertices(square, square, bg,
                                     AprioriData(4, 0.4, 0.4, 1, 1, math.pi / 2, 1, 3, 2)), 0.0)
    assert q.n == 6
    merged, on = merge_interface_kinks(q, bg)
    assert merged.n == 4 and on.sum() == 2


def test_crossings_of_square(bg, square):
    cs = interface_crossings(square, bg)
    assert len(cs) == 2
    assert {tuple(np.round(c.point, 12)) for c in cs} == {(0.3, 0.0), (-0.3, 0.0)}
    with pytest.raises(VertexOnInterface):
        interface_crossings(rectangle(-0.3, 0.0, 0.3, 0.4), bg)


# ----------------------------------------------------------------- distances

def test_hausdorff_translated_square(square):
    # for a positive offset the farthest point is a corner of either square
    off = np.array([0.012, 0.005])
    assert hausdorff_distance(square, square.translated(off)) == pytest.approx(np.hypot(*off), rel=1e-14)


def _boundary_samples(p, step):
    pts = []
    for a, b in zip(p.seg_a, p.seg_b):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / step)))
        s = np.linspace(0, 1, n, endpoint=False)
        pts.append(a + s[:, None] * (b - a))
    return np.vstack(pts)


def _dense_hausdorff(p, q, step=1e-4):
    # oracle: exact point-to-boundary distances from densely sampled boundary points
    d1 = p.boundary_distance(_boundary_samples(q, step)).max()
    d2 = q.boundary_distance(_boundary_samples(p, step)).max()
    return max(d1, d2)


def test_hausdorff_matches_dense_sampling(bg, apriori_rand, rng):
    for _ in range(20):
        p = random_admissible_polygon(rng, bg, apriori_rand)
        q = random_nearby_polygon(rng, p, bg, apriori_rand, 0.05)
        exact = hausdorff_distance(p, q)
        assert exact == pytest.approx(_dense_hausdorff(p, q), abs=1e-4)
        assert exact >= _dense_hausdorff(p, q) - 1e-12


coords = st.floats(-0.6, 0.6, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=3, max_size=6),
       st.lists(st.tuples(coords, coords), min_size=3, max_size=6), st.integers(0, 5))
def test_hausdorff_metric_properties(va, vb, shift):
    try:
        p, q = Polygon(va), Polygon(vb)
    except InvalidPolygon:
        return
    if min(abs(p.area()), abs(q.area())) < 1e-6 or min(p.side_lengths().min(), q.side_lengths().min()) < 1e-9:
        return
    assert hausdorff_distance(p, q) == pytest.approx(hausdorff_distance(q, p), abs=1e-12)
    rolled = Polygon(np.roll(p.vertices, shift % p.n, axis=0))
    assert hausdorff_distance(p, rolled) <= 1e-12


def test_symmetric_difference_of_translated_square(square):
    dx, dy = 0.02, 0.01
    s = 0.6
    want = 2 * (s * s - (s - dx) * (s - dy))
    assert symmetric_difference_area(square, square.translated([dx, dy])) == pytest.approx(want, rel=1e-12)


def test_gamma_gap_identity_by_hand(bg, square):
    # square [-.3,.3]^2 moved by (dx, dy) > 0 across the interface y = 0 (gammas 1 below, 2 above)
    k, dx, dy = 3.0, 0.02, 0.01
    q = square.translated([dx, dy])
    # P1 \ P0: right strip x in [.3, .3+dx], y in [-.3+dy, .3+dy]; top strip y in [.3, .3+dy], x in [-.3+dx, .3]
    # P0 \ P1: left strip x in [-.3, -.3+dx], y in [-.3, .3]; bottom strip y in [-.3, -.3+dy], x in [-.3+dx, .3]
    up = dx * (0.3 + dy) + dy * (0.6 - dx) + dx * 0.3
    down = dx * (0.3 - dy) + dx * 0.3 + dy * (0.6 - dx)
    gaps = gamma_gap_integrals(square, q, bg, k)
    assert gaps["l2_sq"] == pytest.approx((k - 2) ** 2 * up + (k - 1) ** 2 * down, rel=1e-10)
    assert gaps["l1"] == pytest.approx((k - 2) * up + (k - 1) * down, rel=1e-10)
    c0 = min(abs(k - g) for g in bg.gammas)
    assert gaps["l2_sq"] >= c0 ** 2 * symmetric_difference_area(square, q)


# ------------------------------------------------------------------ matching

def _min_cost_bijection(v0, v1):
    # oracle: every cyclic ordering and reflection of v1
    n = len(v0)
    best = math.inf
    for perm in itertools.permutations(range(n)):
        c = float(np.linalg.norm(v1[list(perm)] - v0, axis=1).sum())
        best = min(best, c)
    return best


def test_matching_equals_exhaustive_oracle(bg, apriori, square, rng):
    for _ in range(10):
        q = Polygon(square.vertices + rng.uniform(-0.005, 0.005, (4, 2)))
        corr = match_vertices(square, q, bg, apriori)
        cost = float(corr.pair_distances()[:4].sum())
        assert cost == pytest.approx(_min_cost_bijection(square.vertices, q.vertices), rel=1e-12)


def test_matching_pairs_crossings(bg, apriori, square):
    q = square.translated([0.01, 0.004])
    corr = match_vertices(square, q, bg, apriori)
    assert corr.M == 6
    assert np.allclose(corr.displacements[:4], [0.01, 0.004])
    # crossings stay on the interface and shift horizontally only
    assert np.allclose(corr.p1[4:, 1], 0.0) and np.allclose(corr.displacements[4:, 0], 0.01)


def test_matching_errors(bg, apriori, square):
    with pytest.raises(DistanceTooLarge):
        match_vertices(square, square.translated([0.05, 0]), bg, apriori)
    tri = Polygon([[-0.3, -0.3], [0.3, -0.3], [0.3, 0.3]])
    with pytest.raises(VertexCountMismatch):
        match_vertices(tri, Polygon([[-0.3, -0.3], [0.3, -0.3], [0.3, 0.3], [0.0, 0.31]]), bg, apriori,
                       enforce_delta0=False)


def test_prop33_bound_on_random_pairs(bg, apriori_rand, rng):
    a = apriori_rand
    for _ in range(100):
        p = random_admissible_polygon(rng, bg, a)
        q = random_nearby_polygon(rng, p, bg, a, a.delta0)
        dH = hausdorff_distance(p, q)
        if dH > a.delta0:
            continue
        corr = match_vertices(p, q, bg, a)
        assert np.all(corr.pair_distances()[:p.n] <= a.C0 * dH + 1e-12)


# ---------------------------------------------------------------------- JSON

def test_scene_round_trip(bg, square):
    obj = {"L": 1.0, "omegas": [-1, 0, 1], "gammas": [1, 2], "k": 3.0, "vertices": square.to_list()}
    sc = scene_from_dict(obj)
    assert sc.bg == bg and np.allclose(sc.polygon.vertices, square.vertices)
    assert scene_from_dict(sc.to_dict()).to_dict() == sc.to_dict()


@pytest.mark.parametrize("patch,field", [({"L": "x"}, "L"), ({"omegas": [-1, 2, 1]}, "omegas"),
                                         ({"gammas": [1, "a"]}, "gammas"), ({"k": None}, "k"),
                                         ({"vertices": [[0, 0], [1]]}, "vertices")])
def test_malformed_scene_names_field(patch, field):
    obj = {"L": 1.0, "omegas": [-1, 0, 1], "gammas": [1, 2], "k": 3.0, "vertices": None}
    obj.update(patch)
    with pytest.raises(GeometryFormatError) as exc:
        scene_from_dict(obj)
    assert exc.value.field == field

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polystab.errors import DisplacementBoundViolation, SingularJacobian, StripCollision
from polystab.geometry import hausdorff_distance, match_vertices, moved_polygon, rectangle
from polystab.mesh import triangulate
from polystab.perturbation import (_norm2, build_displacement, calA, correspondence_for, crossing_velocity,
                                   pullback_A, pullback_increment, unit_vertex_field,
                                   verify_phi_properties)
from polystab.experiments import random_sweep_pair
from polystab.shape_calculus import fit_slope

small = arrays(np.float64, (2, 2), elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=200, deadline=None)
@given(small, st.floats(1e-3, 0.2))
def test_pullback_closed_form(D, t):
    J = np.eye(2) + t * D
    det = np.linalg.det(J)
    if det < 0.05:
        return
    Ji = np.linalg.inv(J)
    want = Ji @ Ji.T * det
    assert np.allclose(pullback_A(D, t), want, rtol=1e-10, atol=1e-12)
    assert np.allclose(pullback_increment(D, t), (want - np.eye(2)) / t, rtol=1e-7, atol=1e-7)


@settings(max_examples=100, deadline=None)
@given(small)
def test_calA_is_symmetric_trace_free(D):
    A = calA(D)
    assert np.allclose(A, A.T) and abs(np.trace(A)) <= 1e-12
    # det A(t) = 1 in two dimensions, so its derivative calA is trace free; A(t) is SPD
    At = pullback_A(D, 1e-3) if np.linalg.det(np.eye(2) + 1e-3 * D) > 0 else np.eye(2)
    assert np.linalg.det(At) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 2, 2), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_closed_form_spectral_norm(M):
    want = np.linalg.norm(M, ord=2, axis=(1, 2))
    assert np.allclose(_norm2(M), want, rtol=1e-7, atol=1e-9 * max(1.0, np.abs(M).max()))


def test_increment_converges_to_calA_linearly():
    rng = np.random.default_rng(0)
    D = rng.standard_normal((50, 2, 2))
    ts = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    err = [np.abs(pullback_increment(D, t) - calA(D)).max() for t in ts]
    assert fit_slope(ts, err) >= 0.9
    # central difference of A(t) reproduces calA to O(t^2)
    t = 1e-4
    cd = (pullback_A(D, t) - pullback_A(D, -t)) / (2 * t)
    assert np.abs(cd - calA(D)).max() <= 1e-6


def test_singular_jacobian():
    with pytest.raises(SingularJacobian):
        pullback_A(-np.eye(2), 1.0)
    with pytest.raises(SingularJacobian):
        pullback_increment(-2 * np.eye(2), 0.5)


@pytest.fixture(scope="module")
def translated_field(bg, apriori, square, square_mesh):
    q = square.translated([0.012, 0.008])
    corr = match_vertices(square, q, bg, apriori)
    return corr, q, build_displacement(corr, square, bg, apriori, mesh=square_mesh)


def test_field_interpolates_and_stays_local(translated_field, square, square_mesh):
    corr, q, fld = translated_field
    assert np.allclose(fld.evaluate(corr.p0), corr.displacements, atol=1e-13)
    # zero on the outer boundary and beyond the strip
    assert np.abs(fld.values[square_mesh.boundary_nodes]).max() == 0.0
    far = square_mesh.centroids[fld.support_tris]
    assert square.boundary_distance(far).max() <= 0.4 / 4 + 0.05 * 1.05
    # interface nodes move horizontally
    assert np.abs(fld.values[square_mesh.interface_nodes, 1]).max() <= 1e-15
    assert fld.bound_ratio() <= 1.0



def test_moved_mesh_conforms_to_target(translated_field, square_mesh, bg):
    corr, q, fld = translated_field
    for t in (0.5, 1.0):
        m = fld.at(t).moved_mesh()
        pt = moved_polygon(corr, t)
        side_nodes = m.nodes[square_mesh.polygon_nodes]
        assert pt.boundary_distance(side_nodes).max() <= 1e-13
        assert np.all(m.areas > 0)
    assert hausdorff_distance(moved_polygon(corr, 1.0), q) <= 1e-13


def test_phi_properties_on_translation(translated_field, bg, square):
    _, _, fld = translated_field
    for t in (0.0, 0.5, 1.0):
        rep = verify_phi_properties(fld.at(t), bg, samples=20_000, p0=square)
        assert rep.ok, rep.summary()


def test_phi_properties_random_pairs(bg, apriori_rand):
    rng = np.random.default_rng(7)
    a = apriori_rand
    for _ in range(3):
        p0, p1 = random_sweep_pair(rng, bg, a, shrink=0.2)
        corr = match_vertices(p0, p1, bg, a)
        fld = build_displacement(corr, p0, bg, a, h=a.d0 / 8)
        rep = verify_phi_properties(fld.at(1.0), bg, samples=20_000, p0=p0)
        assert rep.ok, rep.summary()


def test_crossing_velocity_matches_finite_difference(bg, square):
    base = correspondence_for(square, bg, np.zeros((4, 2)))
    eps = 1e-7
    for vertex in range(4):
        for axis in (0, 1):
            d = np.zeros((4, 2))
            d[vertex, axis] = eps
            moved = correspondence_for(square, bg, d, exact=True)
            fd = moved.displacements[4:, 0] / eps
            assert np.allclose(crossing_velocity(square, base, vertex, axis), fd, atol=1e-6)


def test_unit_vertex_field(bg, apriori, square, square_mesh):
    fld = unit_vertex_field(square, bg, apriori, square_mesh, 2, 1)
    vid = square_mesh.find_nodes(square.vertices)
    assert np.allclose(fld.values[vid[2]], [0, 1]) and np.abs(fld.values[vid[[0, 1, 3]]]).max() == 0.0


def test_strip_collision(bg, apriori, square_mesh):
    thin = rectangle(-0.3, -0.4, 0.3, -0.25)
    m = triangulate(bg, thin, 0.05)
    corr = correspondence_for(thin, bg, np.full((4, 2), 1e-3))
    with pytest.raises(StripCollision):
        build_displacement(corr, thin, bg, apriori, mesh=m)


def test_bound_violation_reported(bg, apriori, square, square_mesh):
    corr = correspondence_for(square, bg, np.full((4, 2), 0.01), exact=True)
    tiny = dataclasses.replace(corr, dH=1e-6)
    with pytest.raises(DisplacementBoundViolation):
        build_displacement(tiny, square, bg, apriori, mesh=square_mesh)

import numpy as np
import pytest
import scipy.linalg as sla

from polystab.dtn import DtNSystem, dtn_matrix, mesh_grams, pairing, restrict_operator, star_norm
from polystab.errors import DimensionMismatch, GramMismatch
from polystab.forward import ConductivityField, energy, trace_of
from polystab.mesh import triangulate


@pytest.fixture(scope="module")
def system(bg, square_mesh, square):
    return DtNSystem(square_mesh, ConductivityField(bg, square, 3.0))


def test_structure(system):
    A = system.operator().matrix
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.abs(A @ np.ones(len(A))).max() <= 1e-10
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    assert ev.min() >= -1e-10 * ev.max()


def test_energy_identity(system, bg, square):
    rng = np.random.default_rng(3)
    op = system.operator()
    for _ in range(3):
        f = rng.standard_normal(op.n)
        u = system.extend(f)
        e = energy(system.mesh, ConductivityField(bg, square, 3.0), u)
        assert pairing(op, f, f) == pytest.approx(e, rel=1e-10)


def test_flux_of_linear_function(bg_hom):
    # for gamma = 1 and u = x, g^T Lambda f = int over the boundary of g n_x
    m = triangulate(bg_hom, None, 0.1)
    op = dtn_matrix(m, 1.0)
    f = trace_of(m, lambda x, y: x)
    pts = m.nodes[m.boundary_nodes]
    n = len(pts)
    want = np.zeros(n)
    for i in range(n):
        j = (i + 1) % n
        e = pts[j] - pts[i]
        nx = e[1] / np.linalg.norm(e)  # outward x-normal of a counterclockwise edge
        want[i] += 0.5 * nx * np.linalg.norm(e)
        want[j] += 0.5 * nx * np.linalg.norm(e)
    assert np.allclose(op.matrix @ f, want, atol=1e-12)


def test_gram_pair_is_inverse(square_mesh):
    gh, gd = mesh_grams(square_mesh)
    assert np.allclose(gh @ gd, np.eye(len(gh)), atol=1e-9)
    one = np.ones(len(gh))
    assert one @ gh @ one == pytest.approx(8.0, rel=1e-10)


def test_star_norm_second_route(system):
    # oracle: spectral norm of Gd^(1/2) D Gd^(1/2) (Gd = Gh^-1)
    op = system.operator()
    rng = np.random.default_rng(4)
    B = rng.standard_normal((op.n, op.n))
    D = op.with_matrix(0.5 * (B + B.T))
    S = sla.sqrtm(op.gram_dual).real
    assert star_norm(D) == pytest.approx(np.linalg.norm(S @ D.matrix @ S, 2), rel=1e-8)
    assert star_norm(op) == pytest.approx(np.linalg.norm(S @ op.matrix @ S, 2), rel=1e-8)


def test_star_norm_is_a_norm(system):
    op = system.operator()
    rng = np.random.default_rng(5)
    X = op.with_matrix(rng.standard_normal((op.n, op.n)))
    Y = op.with_matrix(rng.standard_normal((op.n, op.n)))
    assert star_norm(-2.5 * X) == pytest.approx(2.5 * star_norm(X), rel=1e-10)
    assert star_norm(X + Y) <= star_norm(X) + star_norm(Y) + 1e-10
    assert star_norm(op, op) == 0.0


def test_mismatched_trace_spaces(bg, square):
    a = dtn_matrix(triangulate(bg, square, 0.1, allow_interface_vertices=True), ConductivityField(bg, square, 3.0))
    b = dtn_matrix(triangulate(bg, square, 0.05, allow_interface_vertices=True), ConductivityField(bg, square, 3.0))
    with pytest.raises(GramMismatch):
        star_norm(a, b)
    with pytest.raises(DimensionMismatch):
        pairing(a, np.ones(b.n), np.ones(b.n))


def test_restriction_identity(system):
    op = system.operator()
    assert np.array_equal(restrict_operator(op, np.eye(op.n), op).matrix, op.matrix)


def test_chimney_mesh_rejected(bg, square):
    m = triangulate(bg, square, 0.1, chimney_halfwidth=0.4, allow_interface_vertices=True)
    with pytest.raises(ValueError):
        DtNSystem(m, 1.0)

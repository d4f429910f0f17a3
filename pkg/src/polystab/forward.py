"""P1 finite elements for the Dirichlet transmission problem."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConformingMesh, SolverBreakdown
from .geometry import TOL, LayeredBackground, Polygon
from .kernels import local_stiffness
from .mesh import Mesh

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class ConductivityField:
    """gamma_b + (k - gamma_b) chi_P, evaluated per triangle through mesh tags."""

    bg: LayeredBackground
    inclusion: Polygon | None = None
    k: float = 1.0

    def values(self, mesh: Mesh) -> np.ndarray:
        g = np.asarray(self.bg.gammas)[mesh.layer]
        if self.inclusion is None:
            return g
        if mesh.polygon is not None and mesh.polygon is self.inclusion:
            inside = mesh.inside
        else:
            inside = self.inclusion.contains(mesh.centroids)
            _check_conforming(mesh, self.inclusion, inside)
        return np.where(inside, self.k, g)


def _check_conforming(mesh, poly, inside):
    # a triangle straddles the polygon if it has vertices strictly on both sides
    pts = mesh.nodes
    d = poly.boundary_distance(pts)
    ins = poly.contains(pts)
    off = d > 1e-10
    tri_in = (ins & off)[mesh.tris].any(axis=1)
    tri_out = (~ins & off)[mesh.tris].any(axis=1)
    bad = tri_in & tri_out
    if bad.any():
        raise NonConformingMesh(f"{int(bad.sum())} triangles straddle the inclusion boundary")


def _check_layers(mesh: Mesh):
    y = mesh.nodes[mesh.tris][:, :, 1]
    for w in mesh.bg.interfaces:
        if np.any((y.min(axis=1) < w - TOL) & (y.max(axis=1) > w + TOL)):
            raise NonConformingMesh(f"triangles straddle the interface y={w}")


def gamma_values(mesh: Mesh, gamma) -> np.ndarray:
    if isinstance(gamma, ConductivityField):
        return gamma.values(mesh)
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        return np.full(mesh.n_tris, float(g))
    if g.shape != (mesh.n_tris,):
        raise ValueError("per-triangle conductivity has the wrong length")
    return g


def assemble_stiffness(mesh: Mesh, gamma, coeff=None, tri_mask=None) -> sp.csr_matrix:
    """Global P1 stiffness of -div(gamma C grad u) with piecewise-constant data.

    ``coeff`` is an optional (m,2,2) per-triangle matrix field (identity if
    omitted); ``tri_mask`` restricts assembly to a subset of triangles.
    """
    g = gamma_values(mesh, gamma)
    if isinstance(gamma, ConductivityField):
        _check_layers(mesh)
    if np.any(g <= 0):
        raise ValueError("conductivity must be positive")
    grads, area = mesh.geometry
    if coeff is None:
        coef = np.broadcast_to(np.eye(2), (mesh.n_tris, 2, 2)) * g[:, None, None]
    else:
        coef = np.asarray(coeff, dtype=float) * g[:, None, None]
    tris = mesh.tris
    if tri_mask is not None:
        tris, grads, area, coef = tris[tri_mask], grads[tri_mask], area[tri_mask], coef[tri_mask]
    loc = local_stiffness(grads, area, np.ascontiguousarray(coef))
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    K = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    K.sum_duplicates()
    return K


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    area = mesh.areas
    loc = area[:, None, None] * (np.ones((3, 3)) + np.eye(3))[None] / 12.0
    rows = np.repeat(mesh.tris, 3, axis=1).ravel()
    cols = np.tile(mesh.tris, (1, 3)).ravel()
    return sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


class SPDSolver:
    """Sparse factorization of an SPD matrix with iterative refinement.

    SuperLU is run with symmetric ordering and no off-diagonal pivoting, so
    the factors form an LDL^T-type decomposition; a non-positive pivot means
    the matrix is not positive definite.
    """

    def __init__(self, A: sp.spmatrix):
        self.A = sp.csc_matrix(A)
        n = self.A.shape[0]
        if n == 0:
            self.lu = None
            return
        try:
            self.lu = spla.splu(self.A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise SolverBreakdown(f"factorization failed: {exc}") from None
        d = self.lu.U.diagonal()
        if not np.all(np.isfinite(d)) or np.any(d <= 0) or np.any(self.lu.perm_r != self.lu.perm_c):
            raise SolverBreakdown("system matrix is not symmetric positive definite")

    def solve(self, b, tol=RESIDUAL_TOL, max_refine=4):
        b = np.asarray(b, dtype=float)
        if self.lu is None:
            return np.zeros_like(b), 0.0
        x = self.lu.solve(b)
        bn = np.linalg.norm(b, axis=0)
        bn = np.where(bn > 0, bn, 1.0)
        res = np.max(np.linalg.norm(b - self.A @ x, axis=0) / bn)
        for _ in range(max_refine):
            if res <= 1e-3 * tol:
                break
            x = x + self.lu.solve(b - self.A @ x)
            res = np.max(np.linalg.norm(b - self.A @ x, axis=0) / bn)
        if not res <= tol:
            raise SolverBreakdown(f"relative residual {res:.3g} above {tol:g}")
        return x, float(res)


class DirichletProblem:
    """Stiffness matrix split into interior and Dirichlet blocks, factorized once."""

    def __init__(self, mesh: Mesh, K: sp.spmatrix):
        self.mesh = mesh
        self.K = sp.csr_matrix(K)
        self.b = mesh.dirichlet_nodes
        self.i = mesh.interior_nodes
        self.K_ii = self.K[self.i][:, self.i]
        self.K_ib = self.K[self.i][:, self.b]
        self.solver = SPDSolver(self.K_ii)

    def solve(self, f, rhs_interior=None):
        """Nodal solution with boundary values f (columns allowed)."""
        f = np.asarray(f, dtype=float)
        rhs = -(self.K_ib @ f)
        if rhs_interior is not None:
            rhs = rhs + rhs_interior
        ui, res = self.solver.solve(rhs)
        u = np.zeros((self.mesh.n_nodes,) + f.shape[1:])
        u[self.b] = f
        u[self.i] = ui
        return u, res

    def solve_homogeneous(self, rhs_interior):
        ui, res = self.solver.solve(rhs_interior)
        u = np.zeros((self.mesh.n_nodes,) + np.shape(rhs_interior)[1:])
        u[self.i] = ui
        return u, res


@dataclass
class DiscreteSolution:
    mesh: Mesh
    coeffs: np.ndarray
    dirichlet_data: np.ndarray
    residual: float
    max_principle_excess: float

    def gradients(self):
        """Per-triangle gradient (m, 2)."""
        return np.einsum("tia,ti->ta", self.mesh.grads, self.coeffs[self.mesh.tris])


def _dmp_excess(u, f) -> float:
    if len(f) == 0:
        return 0.0
    return float(max(0.0, u.max() - f.max(), f.min() - u.min()))


def solve_dirichlet(mesh: Mesh, gamma, f) -> DiscreteSolution:
    """Galerkin solution with u = f on the Dirichlet nodes.

    The discrete maximum principle excess is reported, not enforced: P1 on
    meshes with obtuse angles has no discrete maximum principle.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (len(mesh.dirichlet_nodes),):
        raise ValueError(f"expected {len(mesh.dirichlet_nodes)} boundary values, got {f.shape}")
    prob = DirichletProblem(mesh, assemble_stiffness(mesh, gamma))
    u, res = prob.solve(f)
    return DiscreteSolution(mesh, u, f, res, _dmp_excess(u, f))


def solve_pullback(mesh: Mesh, gamma0, fmap, f) -> DiscreteSolution:
    """Solution of the A(t)-weighted problem on the fixed reference mesh."""
    f = np.asarray(f, dtype=float)
    coef = fmap.coefficient(mesh)
    prob = DirichletProblem(mesh, assemble_stiffness(mesh, gamma0, coef))
    u, res = prob.solve(f)
    return DiscreteSolution(mesh, u, f, res, _dmp_excess(u, f))


def energy(mesh: Mesh, gamma, u, coeff=None) -> float:
    """Dirichlet energy  int gamma C grad u . grad u."""
    K = assemble_stiffness(mesh, gamma, coeff)
    return float(u @ (K @ u))


def h1_norm(mesh: Mesh, u) -> float:
    K = assemble_stiffness(mesh, 1.0)
    M = mass_matrix(mesh)
    return float(np.sqrt(u @ (K @ u) + u @ (M @ u)))


def trace_of(mesh: Mesh, fn, nodes=None) -> np.ndarray:
    """Nodal values of fn(x, y) on the Dirichlet nodes (or the given nodes)."""
    idx = mesh.dirichlet_nodes if nodes is None else nodes
    p = mesh.nodes[idx]
    return np.asarray(fn(p[:, 0], p[:, 1]), dtype=float)

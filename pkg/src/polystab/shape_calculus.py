"""Distributed shape derivative of the DtN pairing and its finite-difference checks.

Along Phi_t = I + tU the pairing F(t) = <Lambda_{P^t} f, g> pulls back to
int gamma_{P0} A(t) grad u_t . grad v_t on the reference mesh, and

    F'(0) = + int gamma_{P0} calA grad u0 . grad v0,
    calA = div(U) I - (DU + DU^T).

The material derivatives of u and v drop out because both have fixed
traces and u0, v0 are (discretely) harmonic, so the derivative is the
coefficient derivative alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtn import DtNSystem, pairing
from .forward import ConductivityField, DirichletProblem, DiscreteSolution, assemble_stiffness
from .geometry import AprioriData, LayeredBackground, Polygon, VertexCorrespondence
from .mesh import Mesh, retriangulate, triangulate
from .perturbation import DisplacementField, _extend, calA, pullback_A


class ShapeContext:
    """Reference configuration: mesh of P0, conductivity, direction field.

    ``field`` must live on ``mesh``.  The t = 0 DtN system (factorization
    and harmonic extensions) is shared by every derivative evaluation.
    """

    def __init__(self, mesh: Mesh, bg: LayeredBackground, k: float, p0: Polygon,
                 field: DisplacementField, a: AprioriData | None = None, sys0: DtNSystem | None = None):
        if field.mesh is not mesh:
            raise ValueError("the displacement field must be defined on the context mesh")
        self.mesh = mesh
        self.bg = bg
        self.k = k
        self.p0 = p0
        self.field = field
        self.a = a
        self.gamma0 = ConductivityField(bg, p0, k)
        self.sys0 = sys0 if sys0 is not None else DtNSystem(mesh, self.gamma0)
        self.gvals = self.sys0.gamma

    @classmethod
    def build(cls, bg, k, p0, corr: VertexCorrespondence, a: AprioriData, h: float,
              check_bound: bool = True):
        from .perturbation import build_displacement
        mesh = triangulate(bg, p0, h, allow_interface_vertices=True)
        fld = build_displacement(corr, p0, bg, a, mesh=mesh, check_bound=check_bound)
        return cls(mesh, bg, k, p0, fld, a)

    def with_field(self, field: DisplacementField) -> "ShapeContext":
        return ShapeContext(self.mesh, self.bg, self.k, self.p0, field, self.a, self.sys0)

    @property
    def boundary(self):
        return self.mesh.boundary_nodes

    def moved_polygon(self, t) -> Polygon:
        """Phi_t(P0): the matched points moved by t times their displacement."""
        return Polygon(self.field.control_points + t * self.field.control_values)

    def extend(self, f):
        return self.sys0.extend(f)


@dataclass
class DerivativeAssembly:
    value: float
    per_triangle: np.ndarray
    field: DisplacementField
    fields_used: tuple

    @property
    def support(self):
        return np.flatnonzero(self.per_triangle != 0)


def _weighted_stiffness(ctx: ShapeContext, coef, mask=None):
    return assemble_stiffness(ctx.mesh, ctx.gvals, coef, tri_mask=mask)


def F_value(t: float, f, g, ctx: ShapeContext, mode: str = "pullback", h: float | None = None) -> float:
    """<Lambda_{P^t} f, g> in one of three discretizations.

    ``pullback`` uses the reference mesh with the A(t) coefficient,
    ``remesh`` a fresh mesh of P^t at the same h, and ``retriangulate`` a
    fresh constrained Delaunay triangulation of the moved reference nodes.
    A fresh mesh carries an O(h) discretization offset that does not vanish
    as t -> 0, so only the last two agree to first order in t.
    """
    op0 = ctx.sys0.operator()
    if t == 0 and mode == "pullback":
        return pairing(op0, f, g)
    if mode == "pullback":
        return pairing(op0, f, g) + t * difference_quotient(t, f, g, ctx)
    if mode == "remesh":
        pt = ctx.moved_polygon(t)
        mesh_t = triangulate(ctx.bg, pt, h or ctx.mesh.h, allow_interface_vertices=True)
        if mesh_t.boundary_signature != ctx.mesh.boundary_signature:
            raise ValueError("remeshed boundary differs from the reference trace space")
        sys_t = DtNSystem(mesh_t, ConductivityField(ctx.bg, pt, ctx.k))
        return pairing(sys_t.operator(), f, g)
    if mode == "retriangulate":
        pt = ctx.moved_polygon(t)
        mesh_t = retriangulate(ctx.mesh, ctx.field.at(t).moved_mesh().nodes, pt)
        sys_t = DtNSystem(mesh_t, ConductivityField(ctx.bg, pt, ctx.k))
        return pairing(sys_t.operator(), f, g)
    raise ValueError(f"unknown mode {mode!r}")


def difference_quotient(t: float, f, g, ctx: ShapeContext) -> float:
    """(F(t) - F(0)) / t in pullback mode, free of cancellation.

    With u_t solving the A(t) problem and v0 the t = 0 extension of g,
    F(t) - F(0) = v0^T (K(t) - K(0)) u_t = t v0^T K_{gamma B(t)} u_t,
    where B(t) = (A(t) - I)/t.
    """
    fmap = ctx.field.at(t)
    u_t = pullback_solution(t, f, ctx).coeffs
    v0 = ctx.extend(g)
    mask = ctx.field.support_tris
    KB = _weighted_stiffness(ctx, fmap.increment(), mask)
    return float(v0 @ (KB @ u_t))


def pullback_solution(t: float, f, ctx: ShapeContext) -> DiscreteSolution:
    """Pulled-back solution u_t on the reference mesh (A(t)-weighted problem)."""
    f = np.asarray(f, dtype=float)
    if t == 0:
        u = ctx.extend(f)
        return DiscreteSolution(ctx.mesh, u, f, 0.0, 0.0)
    coef = pullback_A(ctx.field.D, t)
    prob = DirichletProblem(ctx.mesh, assemble_stiffness(ctx.mesh, ctx.gvals, coef))
    u, res = prob.solve(f)
    return DiscreteSolution(ctx.mesh, u, f, res, 0.0)


def gateaux(f, g, ctx: ShapeContext, field: DisplacementField | None = None) -> DerivativeAssembly:
    """F'(0) = sum over triangles of gamma (calA grad u0 . grad v0) area."""
    fld = ctx.field if field is None else field
    u0 = ctx.extend(f)
    v0 = ctx.extend(g)
    m = ctx.mesh
    gu = np.einsum("tia,ti->ta", m.grads, u0[m.tris])
    gv = np.einsum("tia,ti->ta", m.grads, v0[m.tris])
    per = ctx.gvals * np.einsum("ta,tab,tb->t", gv, calA(fld.D), gu) * m.areas
    return DerivativeAssembly(float(per.sum()), per, fld, (u0, v0))


def material_derivative(f, ctx: ShapeContext) -> DiscreteSolution:
    """u_dot with zero trace solving K u_dot = -K_{gamma calA} u0 at interior nodes."""
    u0 = ctx.extend(f)
    KA = _weighted_stiffness(ctx, calA(ctx.field.D), ctx.field.support_tris)
    p = ctx.sys0.problem
    rhs = -(KA @ u0)[p.i]
    ud, res = p.solve_homogeneous(rhs)
    return DiscreteSolution(ctx.mesh, ud, np.zeros(len(p.b)), res, 0.0)


def material_flux(udot: DiscreteSolution, g, ctx: ShapeContext) -> float:
    """Variational <gamma d(u_dot)/dn, g> = g^T (K u_dot) restricted to the boundary."""
    r = ctx.sys0.K @ udot.coeffs
    return float(np.asarray(g) @ r[ctx.boundary])


def dtn_derivative(direction: DisplacementField, ctx: ShapeContext) -> np.ndarray:
    """Lambda' with entries gateaux(e_a, e_b): E^T K_{gamma calA} E."""
    mask = direction.support_tris
    if not mask.any():
        nb = len(ctx.boundary)
        return np.zeros((nb, nb))
    KA = _weighted_stiffness(ctx, calA(direction.D), mask)
    E = ctx.sys0.E
    return np.asarray(E.T @ (KA @ E))


def gateaux_at(t0: float, f, g, ctx: ShapeContext, strip: str = "reextrude",
               h: float | None = None) -> float:
    """F'(t0) for the family through P^{t0} with velocities P1_j - P0_j.

    ``reextrude`` meshes P^{t0} afresh and rebuilds the strip field around
    it; ``transport`` reuses the moved reference mesh with the same nodal
    velocities (the derivative of the pullback discretization).
    """
    if strip == "transport":
        m = ctx.field.at(t0).moved_mesh()
        sys_t = DtNSystem(m, ctx.gvals)
        fld = DisplacementField(m, ctx.field.values, None, ctx.field.C0, ctx.field.d0)
        sub = ShapeContext(m, ctx.bg, ctx.k, ctx.moved_polygon(t0), fld, ctx.a, sys_t)
        return gateaux(f, g, sub).value
    if strip != "reextrude":
        raise ValueError(f"unknown strip policy {strip!r}")
    if ctx.a is None:
        raise ValueError("re-extrusion needs the a priori data (strip width)")
    pt = ctx.moved_polygon(t0)
    mesh_t = triangulate(ctx.bg, pt, h or ctx.mesh.h, allow_interface_vertices=True)
    cv = ctx.field.control_values
    corr = VertexCorrespondence(pt.vertices, pt.vertices + cv, pt.n)
    fld = _extend(corr, pt, ctx.bg, ctx.a, mesh_t)
    sub = ShapeContext(mesh_t, ctx.bg, ctx.k, pt, fld, ctx.a)
    return gateaux(f, g, sub).value


def fd_table(ctx: ShapeContext, f, g, ts=(1e-1, 1e-2, 1e-3, 1e-4)):
    """Rows (t, F(t), FD quotient, F'(0), |error|) in pullback mode and the fitted slope."""
    d = gateaux(f, g, ctx).value
    F0 = F_value(0.0, f, g, ctx)
    rows = []
    for t in ts:
        q = difference_quotient(t, f, g, ctx)
        rows.append((t, F0 + t * q, q, d, abs(q - d)))
    return rows, fit_slope([r[0] for r in rows], [r[4] for r in rows])


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])

"""Recovery of the inclusion vertices from a measured DtN operator.

Damped Gauss-Newton (Levenberg) on the 2N vertex coordinates with the
residual R = Phi^T (Lambda_p - Lambda_meas) Phi.  The columns of Phi are
the lowest boundary eigenmodes (arc-length Laplacian) scaled to unit
H^{1/2} norm, i.e. a finite set of smooth current patterns.  The Jacobian
column for vertex j and axis c is Phi^T Lambda'_{jc} Phi, with Lambda' the
shape derivative along the unit displacement of that vertex.

Why few modes: Lambda_p and Lambda_meas come from different meshes, and
their discretization gap grows with the mode number while the response to
a deep inclusion decays with it.  At h = 0.05 the gap already exceeds the
response to a 0.02 shift from the 16th mode on, and over all modes it is
about a thousand times larger.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .dtn import DtNOperator, DtNSystem, restrict_operator, star_norm
from .errors import CrossingMismatch, InfeasibleProjection, PolystabError
from .forward import ConductivityField
from .geometry import (AprioriData, LayeredBackground, Polygon, hausdorff_distance,
                       interface_crossings, validate_polygon)
from .mesh import boundary_prolongation, trace_matrices, triangulate
from .perturbation import unit_vertex_field
from .shape_calculus import ShapeContext, dtn_derivative

log = logging.getLogger(__name__)


@dataclass
class ReconContext:
    """Fixed data of the inverse problem: background, contrast, a priori pack, mesh size."""

    bg: LayeredBackground
    k: float
    a: AprioriData
    h: float
    min_angle: float = 20.0
    n_modes: int | None = 8

    def mesh_for(self, p: Polygon):
        return triangulate(self.bg, p, self.h, allow_interface_vertices=True, min_angle=self.min_angle)

    def system(self, p: Polygon) -> DtNSystem:
        return DtNSystem(self.mesh_for(p), ConductivityField(self.bg, p, self.k))

    def operator(self, p: Polygon) -> DtNOperator:
        return self.system(p).operator()


def synthetic_target(truth: Polygon, ctx: ReconContext, factor: int = 2) -> DtNOperator:
    """Lambda_truth computed on a mesh ``factor`` times finer and restricted to the coarse trace space."""
    coarse = ctx.mesh_for(truth)
    fine = triangulate(ctx.bg, truth, ctx.h / factor, boundary_h=ctx.h, boundary_mult=factor,
                       allow_interface_vertices=True, min_angle=ctx.min_angle)
    op_f = DtNSystem(fine, ConductivityField(ctx.bg, truth, ctx.k)).operator()
    P = boundary_prolongation(coarse, fine)
    template = DtNSystem(coarse, ConductivityField(ctx.bg, truth, ctx.k)).operator()
    return restrict_operator(op_f, P, template)


@lru_cache(maxsize=8)
def _basis_cached(signature, pts_bytes, n, n_modes):
    M, K = trace_matrices(np.frombuffer(pts_bytes).reshape(n, 2))
    lam, V = sla.eigh(K, M)
    k = n if n_modes is None else min(n_modes, n)
    return V[:, :k] / (1 + np.maximum(lam[:k], 0.0)) ** 0.25


def measurement_basis(mesh, n_modes: int | None = 8) -> np.ndarray:
    """(n, n_modes) lowest boundary eigenmodes with unit H^{1/2} norm (all modes for None)."""
    pts = np.ascontiguousarray(mesh.nodes[mesh.boundary_nodes])
    return _basis_cached(mesh.boundary_signature, pts.tobytes(), len(pts), n_modes)


def _residual(op: DtNOperator, target: DtNOperator, Phi):
    op._check(target)
    R = Phi.T @ (op.matrix - target.matrix) @ Phi
    return R, 0.5 * float(np.sum(R * R))


def _jacobian(p: Polygon, sys: DtNSystem, rctx: ReconContext, Phi):
    cols = []
    base = None
    for j in range(p.n):
        for c in (0, 1):
            fld = unit_vertex_field(p, rctx.bg, rctx.a, sys.mesh, j, c)
            if base is None:
                base = ShapeContext(sys.mesh, rctx.bg, rctx.k, p, fld, rctx.a, sys)
            cols.append((Phi.T @ dtn_derivative(fld, base) @ Phi).ravel())
    return np.column_stack(cols)


def misfit_and_gradient(p: Polygon, target: DtNOperator, ctx: ReconContext, return_jacobian=False):
    """Misfit 1/2 ||Phi^T (Lambda_p - Lambda_t) Phi||_F^2 and its gradient (N, 2)."""
    sys = ctx.system(p)
    op = sys.operator()
    Phi = measurement_basis(sys.mesh, ctx.n_modes)
    R, f = _residual(op, target, Phi)
    J = _jacobian(p, sys, ctx, Phi)
    g = (J.T @ R.ravel()).reshape(p.n, 2)
    if return_jacobian:
        return f, g, J, R, op
    return f, g


def project_to_class(p: Polygon, bg: LayeredBackground, a: AprioriData) -> Polygon:
    """Pull vertices violating the boundary or interface standoff to the nearest feasible point.

    Raises InfeasibleProjection when other constraints (sides, angles,
    simplicity) remain violated.
    """
    v = p.vertices.copy()
    lim = bg.L - a.d0
    v = np.clip(v, -lim, lim)
    for w in bg.interfaces:
        d = v[:, 1] - w
        near = np.abs(d) < a.d0 / 2
        v[near, 1] = w + np.where(d[near] >= 0, 1.0, -1.0) * a.d0 / 2
    q = Polygon(v)
    rep = validate_polygon(q, bg, a)
    if not rep.ok:
        raise InfeasibleProjection("cannot restore the class constraints: " + ", ".join(rep.violations()))
    return q


@dataclass
class ReconstructionState:
    current: Polygon
    misfit: float
    history: list = field(default_factory=list)  # dicts: iteration, misfit, dH, mu, accepted
    step_control: float = 0.0
    iterations: int = 0
    reason: str = ""
    operator: DtNOperator | None = None
    runtime: float = 0.0

    def accepted_misfits(self):
        return [r["misfit"] for r in self.history if r["accepted"]]

    def stability_ratio(self, truth: Polygon, target: DtNOperator):
        """dH(final, truth) / ||Lambda_final - Lambda_target||_*."""
        s = star_norm(self.operator, target)
        return hausdorff_distance(self.current, truth) / s if s > 0 else float("nan")


def _crossing_signature(p, bg):
    return sorted((c.side, c.interface) for c in interface_crossings(p, bg))


def gauss_newton(init: Polygon, target: DtNOperator, ctx: ReconContext, max_iter: int = 30,
                 tol: float = 0.0, damping: float | None = None, truth: Polygon | None = None,
                 xtol: float = 1e-6, ftol: float = 1e-8, mu_max: float = 1e12,
                 callback=None) -> ReconstructionState:
    """Levenberg-damped Gauss-Newton on vertex coordinates.

    Damping starts at ``damping`` (default 1e-3 tr(J^T J) / 2N), is
    multiplied by 10 after a rejected step and by 0.3 after an accepted one.
    A step is rejected if it raises the misfit, changes the interface
    crossing pattern, or cannot be projected back into the admissible class.
    """
    t0 = time.perf_counter()
    p = project_to_class(init, ctx.bg, ctx.a)
    sig = _crossing_signature(p, ctx.bg)
    f, g, J, R, op = misfit_and_gradient(p, target, ctx, return_jacobian=True)
    dH = hausdorff_distance(p, truth) if truth is not None else None
    st = ReconstructionState(p, f, [dict(iteration=0, misfit=f, dH=dH, mu=None, accepted=True)],
                             operator=op)
    if f <= tol:
        st.reason = "tolerance"
        st.runtime = time.perf_counter() - t0
        return st
    JtJ = J.T @ J
    mu = damping if damping is not None else 1e-3 * np.trace(JtJ) / (2 * p.n)
    r = R.ravel()
    for it in range(1, max_iter + 1):
        st.iterations = it
        step = sla.solve(JtJ + mu * np.eye(len(JtJ)), -(J.T @ r), assume_a="pos")
        accepted, reason = False, "misfit increase"
        try:
            q = project_to_class(Polygon(p.vertices + step.reshape(-1, 2)), ctx.bg, ctx.a)
            if _crossing_signature(q, ctx.bg) != sig:
                raise CrossingMismatch("step changes the interface crossing pattern")
            fq, gq, Jq, Rq, opq = misfit_and_gradient(q, target, ctx, return_jacobian=True)
            accepted = fq < f
        except PolystabError as exc:
            reason = type(exc).__name__
        if accepted:
            rel = (f - fq) / f
            p, f, J, R, op = q, fq, Jq, Rq, opq
            r = R.ravel()
            JtJ = J.T @ J
            mu *= 0.3
        else:
            mu *= 10
        dH = hausdorff_distance(p, truth) if truth is not None else None
        rec = dict(iteration=it, misfit=f, dH=dH, mu=mu, accepted=accepted,
                   step=float(np.abs(step).max()), note="" if accepted else reason)
        st.history.append(rec)
        log.info("iter %d misfit %.6g accepted %s mu %.3g", it, f, accepted, mu)
        if callback is not None:
            callback(rec)
        st.current, st.misfit, st.step_control, st.operator = p, f, mu, op
        if f <= tol:
            st.reason = "tolerance"
            break
        if accepted and (np.abs(step).max() < xtol or rel < ftol):
            st.reason = "converged"
            break
        if mu > mu_max:
            st.reason = "step collapse"
            break
    else:
        st.reason = "max_iter"
    st.runtime = time.perf_counter() - t0
    return st

"""Displacement fields supported near the inclusion boundary and the maps I + tU.

The field is continuous piecewise linear on the finite element mesh of the
reference configuration.  On the polygon boundary it interpolates the
matched-point displacements affinely; on the interfaces its vertical
component vanishes; in the strip of width d0/4 around the boundary it is
the discrete harmonic extension of those values; elsewhere it is zero.
Because it is P1 on the mesh, the map I + tU moves the mesh onto a
conforming mesh of the moved polygon.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DisplacementBoundViolation, SingularJacobian, StripCollision
from .forward import SPDSolver, assemble_stiffness
from .geometry import AprioriData, LayeredBackground, Polygon, VertexCorrespondence
from .kernels import min_dist_to_segments
from .mesh import SIDE, Mesh, triangulate


# ------------------------------------------------------- closed-form calculus

def jacobian(D, t):
    return np.eye(2) + t * np.asarray(D)


def pullback_A(D, t):
    """A(t) = (I + tD)^{-1} (I + tD)^{-T} det(I + tD), per triangle."""
    D = np.asarray(D, dtype=float)
    J = np.eye(2) + t * D
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    if np.any(det <= 0):
        raise SingularJacobian(f"det(I + tDU) <= 0 (min {float(np.min(det)):.3g})")
    adj = np.empty_like(J)
    adj[..., 0, 0] = J[..., 1, 1]
    adj[..., 1, 1] = J[..., 0, 0]
    adj[..., 0, 1] = -J[..., 0, 1]
    adj[..., 1, 0] = -J[..., 1, 0]
    # J^{-1} J^{-T} det = adj adj^T / det
    return np.einsum("...ij,...kj->...ik", adj, adj) / det[..., None, None]


def calA(D):
    """div(U) I - (DU + DU^T): the t-derivative of A at t = 0 (trace free)."""
    D = np.asarray(D, dtype=float)
    tr = D[..., 0, 0] + D[..., 1, 1]
    return tr[..., None, None] * np.eye(2) - (D + np.swapaxes(D, -1, -2))


def pullback_increment(D, t):
    """(A(t) - I) / t without cancellation; tends to calA(D) as t -> 0.

    With tr = tr D, dt = det D and det = 1 + t tr + t^2 dt:
    (A - I)/t = [(tr + t (tr^2 - dt)) I - (1 + t tr)(D + D^T) + t D D^T] / det.
    """
    D = np.asarray(D, dtype=float)
    tr = D[..., 0, 0] + D[..., 1, 1]
    dd = D[..., 0, 0] * D[..., 1, 1] - D[..., 0, 1] * D[..., 1, 0]
    det = 1 + t * tr + t * t * dd
    if np.any(det <= 0):
        raise SingularJacobian("det(I + tDU) <= 0")
    sym = D + np.swapaxes(D, -1, -2)
    DDt = np.einsum("...ij,...kj->...ik", D, D)
    num = ((tr + t * (tr * tr - dd))[..., None, None] * np.eye(2)
           - (1 + t * tr)[..., None, None] * sym + t * DDt)
    return num / det[..., None, None]


def inverse_jacobian_rate(D, t):
    """d/dt (I + tD)^{-1} = -(I + tD)^{-1} D (I + tD)^{-1}."""
    Ji = np.linalg.inv(np.eye(2) + t * np.asarray(D))
    return -Ji @ D @ Ji


# ------------------------------------------------------------------ the field

@dataclass(eq=False)
class DisplacementField:
    """Continuous P1 vector field on ``mesh`` (nodal ``values``, shape (n,2))."""

    mesh: Mesh
    values: np.ndarray
    dH: float | None
    C0: float | None
    d0: float
    control_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    control_values: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    strip: np.ndarray | None = None

    @cached_property
    def D(self):
        """Per-triangle gradient DU (m,2,2), DU[a,b] = d U_a / d x_b."""
        return np.einsum("tia,tib->tab", self.values[self.mesh.tris], self.mesh.grads)

    @cached_property
    def support_tris(self):
        nz = np.any(self.values != 0, axis=1)
        return nz[self.mesh.tris].any(axis=1)

    def evaluate(self, pts, return_tri=False):
        """U at points (zero outside the mesh); optionally the triangle index."""
        pts = np.atleast_2d(pts)
        tri, bary = self.mesh.locator.locate(pts)
        out = np.zeros((len(pts), 2))
        ok = tri >= 0
        out[ok] = np.einsum("pi,pia->pa", bary[ok], self.values[self.mesh.tris[tri[ok]]])
        return (out, tri) if return_tri else out

    def gradient_at(self, pts):
        _, tri = self.evaluate(pts, return_tri=True)
        G = np.zeros((len(tri), 2, 2))
        G[tri >= 0] = self.D[tri[tri >= 0]]
        return G

    def bound_ratio(self) -> float:
        """max over triangles of (max |U| + d0/8 |DU|_2) / (C0 dH)."""
        if not self.dH:
            return 0.0
        umax = np.linalg.norm(self.values, axis=1)[self.mesh.tris].max(axis=1)
        dn = np.linalg.norm(self.D, ord=2, axis=(1, 2))
        return float(np.max(umax + self.d0 / 8 * dn) / (self.C0 * self.dH))

    def calA(self):
        return calA(self.D)

    def scaled(self, c) -> "DisplacementField":
        return DisplacementField(self.mesh, c * self.values, None if self.dH is None else abs(c) * self.dH,
                                 self.C0, self.d0, self.control_points, c * self.control_values, self.strip)

    def __add__(self, other):
        if other.mesh is not self.mesh:
            raise ValueError("fields live on different meshes")
        return DisplacementField(self.mesh, self.values + other.values, None, self.C0, self.d0,
                                 self.control_points, self.control_values + other.control_values,
                                 self.strip)

    def at(self, t) -> "FamilyMap":
        return FamilyMap(self, t)


@dataclass(frozen=True, eq=False)
class FamilyMap:
    """Phi_t = I + tU."""

    field: DisplacementField
    t: float

    def phi(self, x):
        x = np.atleast_2d(x)
        return x + self.t * self.field.evaluate(x)

    def dphi(self, x):
        return np.eye(2) + self.t * self.field.gradient_at(x)

    def jacobians(self):
        return np.eye(2) + self.t * self.field.D

    def coefficient(self, mesh: Mesh | None = None):
        """A(t) per triangle of the reference mesh."""
        if mesh is not None and mesh is not self.field.mesh:
            raise ValueError("coefficient requested on a mesh other than the field's")
        if self.t == 0:
            return np.broadcast_to(np.eye(2), (self.field.mesh.n_tris, 2, 2)).copy()
        return pullback_A(self.field.D, self.t)

    def increment(self):
        """(A(t) - I)/t per triangle (calA at t = 0)."""
        if self.t == 0:
            return calA(self.field.D)
        return pullback_increment(self.field.D, self.t)

    def moved_mesh(self) -> Mesh:
        m = self.field.mesh
        return m.moved(m.nodes + self.t * self.field.values)


def _side_params(p0: Polygon, corr: VertexCorrespondence):
    """Control parameters and values per side of P0 (including endpoints)."""
    N = p0.n
    disp = corr.displacements
    per_side = []
    for j in range(N):
        ks = [0.0]
        vs = [disp[j]]
        sel = np.flatnonzero(corr.crossing_side == j)
        order = np.argsort(corr.crossing_param[sel])
        for r in sel[order]:
            ks.append(float(corr.crossing_param[r]))
            vs.append(disp[N + r])
        ks.append(1.0)
        vs.append(disp[(j + 1) % N])
        per_side.append((np.array(ks), np.array(vs)))
    return per_side


def build_displacement(corr: VertexCorrespondence, p0: Polygon, bg: LayeredBackground, a: AprioriData,
                       mesh: Mesh | None = None, h: float | None = None,
                       check_bound: bool = True) -> DisplacementField:
    """Displacement field matching ``corr`` on the reference mesh.

    ``corr`` must pair the vertices of ``p0`` in their stored order (the
    crossings appended), as produced by ``match_vertices``.  When the bound
    check fails on an internally built mesh, the mesh is refined once.
    """
    if not np.allclose(corr.p0[:corr.n_vertices], p0.vertices, atol=1e-14, rtol=0):
        raise ValueError("correspondence does not start with the vertices of p0")
    own = mesh is None
    if own:
        mesh = triangulate(bg, p0, h if h is not None else a.d0 / 8, allow_interface_vertices=True)
    fld = _extend(corr, p0, bg, a, mesh)
    if check_bound and corr.dH > 0 and fld.bound_ratio() > 1 + 1e-9:
        if own:
            mesh = triangulate(bg, p0, 0.5 * (h if h is not None else a.d0 / 8), allow_interface_vertices=True)
            fld = _extend(corr, p0, bg, a, mesh)
        if fld.bound_ratio() > 1 + 1e-9:
            raise DisplacementBoundViolation(
                f"|U| + d0/8 |DU| reaches {fld.bound_ratio():.3g} C0 dH")
    return fld


def _extend(corr, p0, bg, a, mesh: Mesh) -> DisplacementField:
    nodes = mesh.nodes
    n = mesh.n_nodes
    width = a.d0 / 4
    N = p0.n
    # per-side distances for the strip and the collision check
    dist = np.column_stack([min_dist_to_segments(nodes, p0.seg_a[j:j + 1], p0.seg_b[j:j + 1])
                            for j in range(N)])
    near = dist < width
    strip = near.any(axis=1)
    for j in range(N):
        for k in range(j + 2, N):
            if j == 0 and k == N - 1:
                continue
            if np.any(near[:, j] & near[:, k]):
                raise StripCollision(f"strip of width d0/4 around sides {j} and {k} overlaps")

    vals = np.zeros((n, 2))
    fixed_x = ~strip.copy()
    fixed_y = ~strip.copy()
    per_side = _side_params(p0, corr)
    for j in range(N):
        e, _ = mesh.edges_with_marker(SIDE + j)
        ids = np.unique(e)
        a_, b_ = p0.vertices[j], p0.vertices[(j + 1) % N]
        ev = b_ - a_
        s = np.clip((nodes[ids] - a_) @ ev / (ev @ ev), 0.0, 1.0)
        ks, vs = per_side[j]
        vals[ids, 0] = np.interp(s, ks, vs[:, 0])
        vals[ids, 1] = np.interp(s, ks, vs[:, 1])
        fixed_x[ids] = True
        fixed_y[ids] = True
    # vertex nodes exactly (shared by two sides)
    vid = mesh.find_nodes(p0.vertices)
    vals[vid] = corr.displacements[:N]
    on_sigma = np.zeros(n, dtype=bool)
    if len(bg.interfaces):
        on_sigma[mesh.interface_nodes] = True
    fixed_y |= on_sigma & strip
    poly_nodes = np.zeros(n, dtype=bool)
    poly_nodes[mesh.polygon_nodes] = True
    vals[on_sigma & strip & ~poly_nodes, 1] = 0.0

    K = assemble_stiffness(mesh, 1.0)
    for comp, fixed in ((0, fixed_x), (1, fixed_y)):
        free = np.flatnonzero(~fixed)
        if len(free) == 0:
            continue
        fx = np.flatnonzero(fixed)
        Kff = K[free][:, free]
        rhs = -(K[free][:, fx] @ vals[fx, comp])
        sol, _ = SPDSolver(Kff).solve(rhs, tol=1e-12)
        vals[free, comp] = sol
    vals[~strip] = 0.0
    pts, cvals, _ = corr.boundary_cycle()
    return DisplacementField(mesh, vals, corr.dH, a.C0, a.d0, pts, cvals, strip)


def crossing_velocity(p0: Polygon, corr: VertexCorrespondence, vertex: int, axis: int):
    """First-order x-motion of each crossing when one vertex moves along ``axis``.

    A crossing of side ab with the interface y = w sits at
    a + lam (b - a), lam = (a_y - w) / (a_y - b_y).
    """
    N = p0.n
    out = np.zeros(corr.M - N)
    for r, (side, lam) in enumerate(zip(corr.crossing_side, corr.crossing_param)):
        a_ = p0.vertices[side]
        b_ = p0.vertices[(side + 1) % N]
        w = corr.p0[N + r, 1]
        dy = a_[1] - b_[1]
        if vertex == side:
            out[r] = (1 - lam) if axis == 0 else (b_[0] - a_[0]) * (w - b_[1]) / dy ** 2
        elif vertex == (side + 1) % N:
            out[r] = lam if axis == 0 else (b_[0] - a_[0]) * (a_[1] - w) / dy ** 2
    return out


def correspondence_for(p0: Polygon, bg: LayeredBackground, disp_vertices, crossing_disp=None,
                       exact: bool = False) -> VertexCorrespondence:
    """Correspondence of p0 with given vertex displacements.

    Crossing displacements are taken from ``crossing_disp`` (x-components), or
    with ``exact`` from the crossings of the displaced polygon, or else zero.
    """
    from .geometry import interface_crossings
    cs = interface_crossings(p0, bg, allow_interface_vertices=True)
    cpts = np.array([c.point for c in cs]).reshape(-1, 2)
    P0 = np.vstack([p0.vertices, cpts])
    d = np.zeros_like(P0)
    d[:p0.n] = disp_vertices
    if exact and len(cs):
        q = p0.vertices + np.asarray(disp_vertices)
        for r, c in enumerate(cs):
            a_, b_ = q[c.side], q[(c.side + 1) % p0.n]
            w = c.point[1]
            lam = (a_[1] - w) / (a_[1] - b_[1])
            d[p0.n + r, 0] = a_[0] + lam * (b_[0] - a_[0]) - c.point[0]
    elif crossing_disp is not None:
        d[p0.n:, 0] = crossing_disp
    return VertexCorrespondence(P0, P0 + d, p0.n, np.array([c.side for c in cs], dtype=int),
                                np.array([c.param for c in cs]),
                                np.array([c.interface for c in cs], dtype=int), 0.0, 0)


def unit_vertex_field(p0: Polygon, bg: LayeredBackground, a: AprioriData, mesh: Mesh,
                      vertex: int, axis: int) -> DisplacementField:
    """Field moving one vertex by a unit vector along ``axis``.

    Interface crossings on the two adjacent sides slide along their
    interface with the first-order motion induced by the vertex.
    """
    base = correspondence_for(p0, bg, np.zeros((p0.n, 2)))
    disp = np.zeros((p0.n, 2))
    disp[vertex, axis] = 1.0
    corr = correspondence_for(p0, bg, disp, crossing_velocity(p0, base, vertex, axis))
    return _extend(corr, p0, bg, a, mesh)


# --------------------------------------------------------- property checking

@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    ratio: float
    detail: str = ""


@dataclass(frozen=True)
class PropertyReport:
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        return [c for c in self.checks if c.name == name]

    def summary(self) -> str:
        return "\n".join(f"{'ok  ' if c.passed else 'FAIL'} {c.name:4s} ratio={c.ratio:.4g} {c.detail}"
                         for c in self.checks)


def _norm2(M):
    """Spectral norms of a stack of 2x2 matrices (closed form, no SVD)."""
    fro = np.einsum("...ij,...ij->...", M, M)
    det = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return np.sqrt(0.5 * (fro + np.sqrt(np.maximum(fro * fro - 4 * det * det, 0.0))))


def _sample_points(fld: DisplacementField, bg, samples, rng):
    L = bg.L
    half = samples // 2
    p = np.vstack([rng.uniform(-L, L, (samples - half, 2))] + [np.zeros((0, 2))])
    if fld.control_points.size:
        lo = fld.control_points.min(axis=0) - fld.d0 / 4
        hi = fld.control_points.max(axis=0) + fld.d0 / 4
        p = np.vstack([p, rng.uniform(lo, hi, (half, 2))])
    else:
        p = np.vstack([p, rng.uniform(-L, L, (half, 2))])
    return p


def verify_phi_properties(fmap: FamilyMap, bg: LayeredBackground, samples: int = 100_000,
                          rng=None, p0: Polygon | None = None) -> PropertyReport:
    """Randomized checks of the six properties of Phi_t, each as a bound ratio.

    A ratio <= 1 passes.  Bounds use C0 dH / d0 from the field:
    f1 boundary interpolation (ratio = error / 1e-12 scale),
    f2 |DPhi - I| <= 8 t C0 dH / d0 < 1/2, det > 0, moved triangles positive,
    f3 layer preservation off the inclusion,
    f4 |dPhi/dt| <= C0 dH and |d Phi^{-1}/dt| <= 2 C0 dH,
    f5 |DU| <= 8 C0 dH / d0 and |(DPhi)^{-1} DU (DPhi)^{-1}| <= 4 * 8 C0 dH / d0,
    f6 |d(DPhi)^{-1}/dt + DU| <= 6 t (8 C0 dH / d0)^2.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    fld, t = fmap.field, fmap.t
    checks = []
    scale = float(np.max(np.linalg.norm(fld.values, axis=1), initial=0.0))
    if fld.dH:
        cdh = fld.C0 * fld.dH
        g = 8 * cdh / fld.d0
    else:
        cdh = g = 0.0

    def ratio(obs, bound):
        if bound == 0:
            return 0.0 if obs <= 1e-14 * max(scale, 1.0) else np.inf
        return obs / bound

    # f1: affine interpolation along the polygon between matched points
    cp, cv = fld.control_points, fld.control_values
    if len(cp):
        k = len(cp)
        s = rng.uniform(0, 1, max(1000, samples // 100))
        j = rng.integers(0, k, len(s))
        x = cp[j] + s[:, None] * (cp[(j + 1) % k] - cp[j])
        want = cv[j] + s[:, None] * (cv[(j + 1) % k] - cv[j])
        err = float(np.max(np.linalg.norm(fld.evaluate(x) - want, axis=1)))
        tol = 1e-12 * max(scale, 1e-300)
        checks.append(PropertyCheck("f1", err <= tol, err / tol if tol else 0.0,
                                    f"max interpolation error {err:.3g}"))
    x = _sample_points(fld, bg, samples, rng)
    U, tri = fld.evaluate(x, return_tri=True)
    D = np.zeros((len(x), 2, 2))
    D[tri >= 0] = fld.D[tri[tri >= 0]]
    dn = _norm2(D)
    J = np.eye(2) + t * D
    det = np.linalg.det(J)
    Ji = np.linalg.inv(J)
    # f2
    moved = fmap.moved_mesh()
    area_ok = bool(np.all(moved.areas > 0))
    inv_dev = float(np.max(_norm2(Ji - np.eye(2))))
    r2 = max(ratio(t * dn.max(), t * g), 2 * t * dn.max(), ratio(inv_dev, 2 * t * g))
    checks.append(PropertyCheck("f2", r2 <= 1 + 1e-9 and bool(np.all(det > 0)) and area_ok
                                and t * dn.max() < 0.5, r2,
                                f"|DPhi-I|={t * dn.max():.3g} min det={det.min():.6f} moved areas>0: {area_ok}"))
    # f3: points off the inclusion stay in their closed layer
    y = x[:, 1]
    Y = y + t * U[:, 1]
    if p0 is not None:
        off = ~p0.contains(x) & (p0.boundary_distance(x) > 1e-9)
    else:
        off = np.ones(len(x), dtype=bool)
    om = np.asarray(bg.omegas)
    li = bg.layer_index(y)
    lo = om[li] - 1e-12
    hi = om[li + 1] + 1e-12
    bad = off & ((Y < lo) | (Y > hi))
    checks.append(PropertyCheck("f3", not bad.any(), float(bad.sum()), f"{int(off.sum())} off-inclusion samples"))
    # f4
    un = np.linalg.norm(U, axis=1)
    inv_rate = np.linalg.norm(np.einsum("pij,pj->pi", Ji, U), axis=1)
    r4 = max(ratio(un.max(), cdh), ratio(inv_rate.max(), 2 * cdh))
    checks.append(PropertyCheck("f4", r4 <= 1 + 1e-9, r4, f"max|U|={un.max():.3g}"))
    # f5
    JDJ = Ji @ D @ Ji
    r5 = max(ratio(dn.max(), g), ratio(_norm2(JDJ).max(), 4 * g))
    checks.append(PropertyCheck("f5", r5 <= 1 + 1e-9, r5, f"max|DU|={dn.max():.3g}"))
    # f6
    dev = _norm2(D - JDJ).max()
    r6 = ratio(dev, 6 * t * g * g) if t > 0 else ratio(dev, 0.0)
    checks.append(PropertyCheck("f6", r6 <= 1 + 1e-9, r6, f"max dev={dev:.3g}"))
    return PropertyReport(tuple(checks))

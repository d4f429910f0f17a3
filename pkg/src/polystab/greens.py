"""Bi-phase fundamental solutions, Green states on the extended domain and the S0 probe.

The extended domain is Omega plus the chimney (-d0, d0) x [L, L + 2 d0]
with conductivity gamma_+ (top layer).  A Green state is split as
G(., y) = Gbar(., y) + w_y, where Gbar is the fundamental solution of a
local one- or two-phase medium around y and w_y a P1 correction.

Integrals of products of log-kernel gradients over triangles are done in
closed form.  For a polygon Q and a point c (z = x - c as a complex number)

    int_Q dA / z    = (1/2i) oint conj(z) / z   dz,
    int_Q dA / z^2  = (1/2i) oint conj(z) / z^2 dz   (principal value),

and both contour integrals are elementary on straight edges.  The
gradient of ln|x - c| is 1/conj(z), and for a symmetric trace-free matrix
[[al, be], [be, -al]] the product with grad ln|x-p| (x) grad ln|x-q| is
al Re(1/(z_p z_q)) - be Im(1/(z_p z_q)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OffsetOutOfRange, SourceOnInterface, SourceTooCloseToVertex
from .forward import ConductivityField, DirichletProblem, assemble_stiffness, mass_matrix
from .geometry import AprioriData, LayeredBackground, Polygon, VertexCorrespondence
from .kernels import min_dist_to_segments
from .mesh import SIDE, Mesh, triangulate
from .perturbation import DisplacementField, build_displacement, calA
from .shape_calculus import fit_slope

LINE_TOL = 1e-12


# ------------------------------------------------------------------ kernels

@dataclass(frozen=True)
class BiphaseKernel:
    """Fundamental solution of -div(g grad G) = delta_source with
    g = gamma_up on {normal . x > line} and gamma_down below.

    With the source on the side of conductivity g_s, g_o the other one and
    kappa = (g_s - g_o)/(g_s + g_o):

        source side: -1/(2 pi g_s) [ln|x - y| + kappa ln|x - y*|]
        other side:  -1/(pi (g_s + g_o)) ln|x - y|

    where y* is the mirror image of the source.
    """

    gamma_up: float
    gamma_down: float
    line: float
    source: tuple
    normal: tuple = (0.0, 1.0)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not math.isclose(float(n @ n), 1.0, rel_tol=1e-12):
            raise ValueError("normal must be a unit vector")
        if self.gamma_up <= 0 or self.gamma_down <= 0:
            raise ValueError("conductivities must be positive")
        if abs(self.offset(np.asarray(self.source, dtype=float))) < LINE_TOL:
            raise SourceOnInterface("source lies on the kernel line")

    @property
    def single_phase(self) -> bool:
        return self.gamma_up == self.gamma_down

    def offset(self, x):
        return np.asarray(x, dtype=float) @ np.asarray(self.normal) - self.line

    @property
    def source_up(self) -> bool:
        return bool(self.offset(np.asarray(self.source, dtype=float)) > 0)

    @property
    def gamma_source(self) -> float:
        return self.gamma_up if self.source_up else self.gamma_down

    @property
    def gamma_other(self) -> float:
        return self.gamma_down if self.source_up else self.gamma_up

    @property
    def kappa(self) -> float:
        gs, go = self.gamma_source, self.gamma_other
        return (gs - go) / (gs + go)

    @property
    def image(self) -> np.ndarray:
        y = np.asarray(self.source, dtype=float)
        return y - 2 * self.offset(y) * np.asarray(self.normal)

    def terms(self, up: bool):
        """Gbar on one side as a list of (coefficient, center) for c ln|x - center|."""
        y = np.asarray(self.source, dtype=float)
        gs, go = self.gamma_source, self.gamma_other
        if up == self.source_up or self.single_phase:
            out = [(-1 / (2 * np.pi * gs), y)]
            if self.kappa != 0:
                out.append((-self.kappa / (2 * np.pi * gs), self.image))
            return out
        return [(-1 / (np.pi * (gs + go)), y)]

    def gamma_side(self, up):
        return np.where(up, self.gamma_up, self.gamma_down)


def biphase_eval(kernel: BiphaseKernel, x):
    """Value and gradient of the kernel at points x (n,2); x must avoid the source."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    up = kernel.offset(x) > 0
    val = np.zeros(len(x))
    grad = np.zeros((len(x), 2))
    for side in (True, False):
        m = up == side
        if not m.any():
            continue
        for c, p in kernel.terms(side):
            d = x[m] - p
            r2 = np.einsum("ij,ij->i", d, d)
            val[m] += 0.5 * c * np.log(r2)
            grad[m] += c * d / r2[:, None]
    return val, grad


# ---------------------------------------------------- closed-form integrals

def _edge_terms(za, zb):
    """int conj(z)/z dz and int conj(z)/z^2 dz along the segment za -> zb."""
    e = zb - za
    ok = e != 0
    es = np.where(ok, e, 1.0)
    B = np.where(ok, np.conj(es) / es, 0.0)
    A = np.conj(za) - B * za
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.where(ok, np.log(zb / np.where(ok, za, 1.0)), 0.0)
        e1 = A * lg + B * e
        e2 = A * (1 / za - 1 / zb) + B * lg
    return np.where(ok, e1, 0.0), np.where(ok, e2, 0.0)


def polygon_moments(polys, center):
    """J1 = int dA/z and J2 = pv int dA/z^2 over CCW polygons (p,K) complex, z = x - center."""
    z = polys - np.asarray(center)[..., None]
    za, zb = z, np.roll(z, -1, axis=1)
    e1, e2 = _edge_terms(za, zb)
    return e1.sum(axis=1) / 2j, e2.sum(axis=1) / 2j


def _cplx(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0] + 1j * p[..., 1]


def _clip(poly, nrm, a, keep_up):
    """Sutherland-Hodgman clip of a polygon (k,2) by {n.x > a} (or its complement)."""
    s = poly @ nrm - a
    if not keep_up:
        s = -s
    out = []
    k = len(poly)
    for i in range(k):
        p, q = poly[i], poly[(i + 1) % k]
        sp_, sq = s[i], s[(i + 1) % k]
        if sp_ >= 0:
            out.append(p)
        if (sp_ > 0 > sq) or (sp_ < 0 < sq):
            out.append(p + sp_ / (sp_ - sq) * (q - p))
    return np.array(out)


@dataclass
class Pieces:
    """Triangles split by kernel lines: padded CCW polygons with side flags."""

    polys: np.ndarray  # (p, K) complex
    tri: np.ndarray  # (p,) triangle index
    up: np.ndarray  # (p, n_lines) bool
    area: np.ndarray  # (p,)


def _partition(mesh: Mesh, tri_ids, lines) -> Pieces:
    pts = mesh.nodes[mesh.tris[tri_ids]]
    nl = len(lines)
    if nl == 0:
        return Pieces(_cplx(pts), np.asarray(tri_ids), np.zeros((len(tri_ids), 0), bool), mesh.areas[tri_ids])
    cut = np.zeros(len(tri_ids), dtype=bool)
    side = np.zeros((len(tri_ids), nl), dtype=bool)
    for l, (nrm, a) in enumerate(lines):
        s = pts @ nrm - a
        cut |= (s.max(axis=1) > 0) & (s.min(axis=1) < 0)
        side[:, l] = s.sum(axis=1) > 0
    polys = [list(p) for p in pts[~cut]]
    tri = list(np.asarray(tri_ids)[~cut])
    ups = list(side[~cut])
    for t, p in zip(np.asarray(tri_ids)[cut], pts[cut]):
        parts = [p]
        for nrm, a in lines:
            nxt = []
            for q in parts:
                for keep in (True, False):
                    c = _clip(q, nrm, a, keep)
                    if len(c) >= 3:
                        nxt.append(c)
            parts = nxt
        for q in parts:
            cen = q.mean(axis=0)
            polys.append(list(q))
            tri.append(t)
            ups.append(np.array([cen @ nrm - a > 0 for nrm, a in lines]))
    K = max(len(p) for p in polys)
    arr = np.array([p + [p[-1]] * (K - len(p)) for p in polys])
    zp = _cplx(arr)
    x, y = arr[..., 0], arr[..., 1]
    area = 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)
    return Pieces(zp, np.array(tri, dtype=np.int64), np.array(ups, dtype=bool).reshape(-1, nl), area)


def _kernel_lines(*kernels):
    out = []
    for k in kernels:
        if k.single_phase:
            continue
        ln = (np.asarray(k.normal, dtype=float), float(k.line))
        if not any(np.allclose(ln[0], o[0]) and abs(ln[1] - o[1]) < LINE_TOL for o in out):
            out.append(ln)
    return out


def _side_of(pieces: Pieces, lines, kernel: BiphaseKernel):
    if kernel.single_phase:
        return np.ones(len(pieces.tri), dtype=bool)
    for l, (nrm, a) in enumerate(lines):
        if np.allclose(nrm, kernel.normal) and abs(a - kernel.line) < LINE_TOL:
            return pieces.up[:, l]
    raise AssertionError("kernel line missing from the partition")


def _grad_integrals(pieces: Pieces, up, kernel: BiphaseKernel):
    """int over each piece of grad Gbar, shape (p, 2)."""
    out = np.zeros((len(pieces.tri), 2))
    for side in (True, False):
        m = up == side
        if not m.any():
            continue
        for c, p in kernel.terms(side):
            j1, _ = polygon_moments(pieces.polys[m], _cplx(p))
            out[m, 0] += c * j1.real
            out[m, 1] -= c * j1.imag
    return out


def _pair_integrals(pieces: Pieces, up_u, ku, up_v, kv, al, be):
    """int over each piece of calA grad Gbar_u . grad Gbar_v for trace-free calA."""
    out = np.zeros(len(pieces.tri))
    for su in (True, False):
        for sv in (True, False):
            m = (up_u == su) & (up_v == sv)
            if not m.any():
                continue
            P = pieces.polys[m]
            cache = {}

            def mom(p):
                key = (float(p[0]), float(p[1]))
                if key not in cache:
                    cache[key] = polygon_moments(P, _cplx(p))
                return cache[key]

            for cu, pu in ku.terms(su):
                for cv, pv in kv.terms(sv):
                    if np.allclose(pu, pv, rtol=0, atol=1e-15):
                        I = mom(pu)[1]
                    else:
                        d = _cplx(pv) - _cplx(pu)
                        I = (mom(pv)[0] - mom(pu)[0]) / d
                    out[m] += cu * cv * (al[m] * I.real - be[m] * I.imag)
    return out


# ---------------------------------------------------------------- contexts

class GreenContext:
    """Mesh of the extended domain with the reference conductivity, factorized once."""

    def __init__(self, mesh: Mesh, bg: LayeredBackground, k: float, p0: Polygon | None, a: AprioriData,
                 c1: float = 4.0):
        if mesh.chimney_halfwidth is None:
            raise ValueError("Green states need a mesh with the chimney")
        self.mesh = mesh
        self.bg = bg
        self.k = k
        self.p0 = p0
        self.a = a
        self.c1 = c1
        self.gamma = ConductivityField(bg, p0, k)
        self.gvals = self.gamma.values(mesh)
        self.K = assemble_stiffness(mesh, self.gvals)
        self.problem = DirichletProblem(mesh, self.K)
        self._full = None

    @classmethod
    def build(cls, bg, k, p0, a: AprioriData, h: float, focus=None, h_min: float | None = None,
              grading: float = 0.1, c1: float = 4.0):
        """Mesh with size max(h_min, grading |x - focus|) near ``focus`` (capped by h)."""
        if focus is not None and h_min is not None:
            f = np.asarray(focus, dtype=float)

            def size_fn(p):
                return np.maximum(h_min, grading * np.linalg.norm(p - f, axis=1))
        else:
            size_fn = None
        mesh = triangulate(bg, p0, h, chimney_halfwidth=a.d0, size_fn=size_fn,
                           allow_interface_vertices=True)
        return cls(mesh, bg, k, p0, a, c1)

    @property
    def omega_tris(self):
        return np.flatnonzero(~self.mesh.chimney)

    def full_pieces(self, kernel):
        lines = _kernel_lines(kernel)
        return _partition(self.mesh, np.arange(self.mesh.n_tris), lines), lines

    def local_size(self, pt) -> float:
        tri, _ = self.mesh.locator.locate(np.atleast_2d(pt))
        if tri[0] < 0:
            return float(self.mesh.h)
        p = self.mesh.nodes[self.mesh.tris[tri[0]]]
        return float(np.max(np.linalg.norm(p - np.roll(p, 1, axis=0), axis=1)))


def _domain_distance(mesh: Mesh, y) -> float:
    b = mesh.nodes[mesh.dirichlet_nodes]
    return float(min_dist_to_segments(np.atleast_2d(y), b, np.roll(b, -1, axis=0))[0])


def local_kernel(y, ctx: GreenContext) -> BiphaseKernel:
    """Kernel of the medium seen from y inside the largest admissible ball.

    The ball radius is the distance to the vertices of P0 and to the outer
    boundary.  If a side of P0 or an interface (outside P0) passes through
    the ball, the nearest one defines a two-phase kernel; otherwise the
    kernel is single-phase with the conductivity at y.
    """
    y = np.asarray(y, dtype=float)
    p0, bg = ctx.p0, ctx.bg
    rho = _domain_distance(ctx.mesh, y)
    if p0 is not None:
        rho = min(rho, float(np.min(np.linalg.norm(p0.vertices - y, axis=1))))
    if rho < ctx.a.d0 / ctx.c1:
        raise SourceTooCloseToVertex(
            f"source at distance {rho:.4g} from the vertices or the outer boundary (< d0/c1 = "
            f"{ctx.a.d0 / ctx.c1:.4g})")
    inside = p0 is not None and bool(p0.contains(y[None])[0])
    gy = ctx.k if inside else float(bg.gamma_at(np.array([[y[0], min(y[1], bg.L - 1e-12)]]))[0])
    best = None
    dsides = [np.inf]
    if p0 is not None:
        dsides = [float(min_dist_to_segments(y[None], p0.seg_a[j:j + 1], p0.seg_b[j:j + 1])[0])
                  for j in range(p0.n)]
        if min(dsides) < LINE_TOL:
            raise SourceOnInterface("source lies on the inclusion boundary")
    j = int(np.argmin(dsides))
    if dsides[j] < rho:
        nrm = p0.outward_normals()[j]
        a_ = float(nrm @ p0.vertices[j])
        foot = y - (nrm @ y - a_) * nrm
        gout = float(bg.gamma_at(foot + 1e-9 * nrm)[0])
        best = (dsides[j], BiphaseKernel(gout, ctx.k, a_, tuple(y), tuple(nrm)))
    if not inside:
        for i, w in enumerate(bg.interfaces):
            d = abs(y[1] - w)
            blocked = (bg.gammas[i] == bg.gammas[i + 1]
                       or (p0 is not None and p0.contains(np.array([[y[0], w]]))[0]))
            if d < rho and (best is None or d < best[0]) and not blocked:
                if d < LINE_TOL:
                    raise SourceOnInterface(f"source lies on the interface y={w}")
                best = (d, BiphaseKernel(bg.gammas[i + 1], bg.gammas[i], float(w), tuple(y)))
    if best is None:
        return BiphaseKernel(gy, gy, float(y[1]) - 1.0, tuple(y))
    return best[1]


@dataclass
class GreenState:
    """G(., y) = Gbar(., y) + w with the kernel chosen around y."""

    source: np.ndarray
    kernel: BiphaseKernel
    w: np.ndarray
    ctx: GreenContext = field(repr=False)
    residual: float = 0.0

    @property
    def grad_w(self):
        m = self.ctx.mesh
        return np.einsum("tia,ti->ta", m.grads, self.w[m.tris])

    def w_h1_norm(self) -> float:
        m = self.ctx.mesh
        K1 = assemble_stiffness(m, 1.0)
        return float(np.sqrt(self.w @ (K1 @ self.w) + self.w @ (mass_matrix(m) @ self.w)))

    def evaluate(self, pts):
        """Values and gradients of G at points (gradient of w taken per triangle)."""
        pts = np.atleast_2d(pts)
        val, grad = biphase_eval(self.kernel, pts)
        tri, bary = self.ctx.mesh.locator.locate(pts)
        if np.any(tri < 0):
            raise ValueError("evaluation point outside the mesh")
        val = val + np.einsum("pi,pi->p", bary, self.w[self.ctx.mesh.tris[tri]])
        return val, grad + self.grad_w[tri]

    def regular_gradient(self) -> np.ndarray:
        """Gradient at the source of G minus its singular term."""
        y = self.source
        up = self.kernel.source_up
        g = np.zeros(2)
        for c, p in self.kernel.terms(up)[1:]:
            d = y - p
            g += c * d / (d @ d)
        tri, _ = self.ctx.mesh.locator.locate(y[None])
        return g + self.grad_w[tri[0]]


def green_state(y, ctx: GreenContext) -> GreenState:
    """Solve for the correction w with
    int gamma grad w . grad psi = -int (gamma - gamma_y) grad Gbar . grad psi,
    w = -Gbar on the outer boundary of the extended domain.
    """
    y = np.asarray(y, dtype=float)
    ker = local_kernel(y, ctx)
    mesh = ctx.mesh
    pieces, lines = ctx.full_pieces(ker)
    up = _side_of(pieces, lines, ker)
    diff = ctx.gvals[pieces.tri] - ker.gamma_side(up)
    sel = diff != 0
    rhs = np.zeros(mesh.n_nodes)
    if sel.any():
        sub = Pieces(pieces.polys[sel], pieces.tri[sel], pieces.up[sel], pieces.area[sel])
        gi = _grad_integrals(sub, up[sel], ker) * diff[sel][:, None]
        loc = -np.einsum("pa,pia->pi", gi, mesh.grads[sub.tri])
        np.add.at(rhs, mesh.tris[sub.tri].ravel(), loc.ravel())
    bnd = mesh.dirichlet_nodes
    f = -biphase_eval(ker, mesh.nodes[bnd])[0]
    p = ctx.problem
    w, res = p.solve(f, rhs_interior=rhs[p.i])
    return GreenState(y, ker, w, ctx, res)


# --------------------------------------------------------------------- S0

def _interior_point(ctx: GreenContext, y, rel=1e-6):
    """Nudge y tangentially so that it lies strictly inside a triangle."""
    y = np.asarray(y, dtype=float)
    tri, bary = ctx.mesh.locator.locate(y[None])
    if tri[0] >= 0 and bary[0].min() > rel:
        return y
    h = ctx.local_size(y)
    for k in range(1, 20):
        z = y + np.array([1e-3 * h * k, 0.37e-3 * h * k])
        tri, bary = ctx.mesh.locator.locate(z[None])
        if tri[0] >= 0 and bary[0].min() > rel:
            return z
    raise ValueError("could not place the source inside a triangle")


def distributed_S0(su: GreenState, sv: GreenState, fld: DisplacementField, norm: float) -> float:
    """-int_Omega gamma (calA/norm) grad G_y . grad G_z, principal value at the sources."""
    ctx = su.ctx
    mesh = ctx.mesh
    tids = np.flatnonzero(fld.support_tris & ~mesh.chimney)
    if len(tids) == 0:
        return 0.0
    lines = _kernel_lines(su.kernel, sv.kernel)
    pc = _partition(mesh, tids, lines)
    up_u = _side_of(pc, lines, su.kernel)
    up_v = _side_of(pc, lines, sv.kernel)
    A = calA(fld.D[pc.tri]) / norm
    al, be = A[:, 0, 0], A[:, 0, 1]
    gwu, gwv = su.grad_w[pc.tri], sv.grad_w[pc.tri]
    val = _pair_integrals(pc, up_u, su.kernel, up_v, sv.kernel, al, be)
    val += np.einsum("pab,pb,pa->p", A, gwv, _grad_integrals(pc, up_u, su.kernel))
    val += np.einsum("pab,pb,pa->p", A, gwu, _grad_integrals(pc, up_v, sv.kernel))
    val += pc.area * np.einsum("pab,pb,pa->p", A, gwu, gwv)
    return float(-np.sum(ctx.gvals[pc.tri] * val))


def source_terms(su: GreenState, sv: GreenState, fld: DisplacementField, norm: float) -> float:
    """Flux of gamma b through vanishing circles around the sources.

    The distributed integral with a source inside the support of U moves the
    source along with the field; adding these terms gives S0 for fixed
    sources (the continuation of S0 from sources outside Omega).
    """
    y, z = su.source, sv.source
    Uy, ty = fld.evaluate(y, return_tri=True)
    Uz, tz = fld.evaluate(z, return_tri=True)
    Uy, Uz = Uy[0] / norm, Uz[0] / norm
    if np.allclose(y, z, rtol=0, atol=1e-15):
        if ty[0] < 0:
            return 0.0
        div = float(np.trace(fld.D[ty[0]])) / norm
        return div / (4 * np.pi * su.kernel.gamma_source) - 2 * float(Uy @ su.regular_gradient())
    out = 0.0
    if np.any(Uy):
        out -= float(Uy @ sv.evaluate(y[None])[1][0])
    if np.any(Uz):
        out -= float(Uz @ su.evaluate(z[None])[1][0])
    return out


def S0_value(su: GreenState, sv: GreenState, fld: DisplacementField, norm: float) -> float:
    return distributed_S0(su, sv, fld, norm) + source_terms(su, sv, fld, norm)


def boundary_representation(su: GreenState, sv: GreenState, fld: DisplacementField, norm: float,
                            order: int = 4) -> float:
    """-int over the sides of P0 of (U.n)(k - gamma) M grad u_i . grad v_i, M = (k/gamma) n n^T + t t^T.

    Interior-side gradients; valid when U vanishes near the vertices, the
    interfaces and the sources.  The overall sign is the one fixed by the
    divergence identity calA grad u . grad v = -div b together with S0 =
    -int gamma calA grad u . grad v, and agrees with finite differences of
    the Green function under the moving inclusion.
    """
    ctx = su.ctx
    mesh, p0, k = ctx.mesh, ctx.p0, ctx.k
    tri_of = {}
    for t, tri in enumerate(mesh.tris):
        if mesh.inside[t]:
            for i in range(3):
                tri_of[frozenset((int(tri[i]), int(tri[(i + 1) % 3])))] = t
    xg, wg = np.polynomial.legendre.leggauss(order)
    s = 0.5 * (xg + 1)
    total = 0.0
    for j in range(p0.n):
        e, _ = mesh.edges_with_marker(SIDE + j)
        nrm = p0.outward_normals()[j]
        tau = np.array([-nrm[1], nrm[0]])
        for a_, b_ in e:
            Ua, Ub = fld.values[a_], fld.values[b_]
            if not (np.any(Ua) or np.any(Ub)):
                continue
            t = tri_of[frozenset((int(a_), int(b_)))]
            pa, pb = mesh.nodes[a_], mesh.nodes[b_]
            x = pa + s[:, None] * (pb - pa)
            xin = x - 1e-9 * nrm
            un = ((1 - s)[:, None] * Ua + s[:, None] * Ub) @ nrm / norm
            gu = biphase_eval(su.kernel, xin)[1] + su.grad_w[t]
            gv = biphase_eval(sv.kernel, xin)[1] + sv.grad_w[t]
            gam = ctx.bg.gamma_at(x + 1e-9 * nrm)
            Mgu = (k / gam)[:, None] * (gu @ nrm)[:, None] * nrm + (gu @ tau)[:, None] * tau
            integrand = un * (k - gam) * np.einsum("pa,pa->p", Mgu, gv)
            total += 0.5 * np.linalg.norm(pb - pa) * float(wg @ integrand)
    return -total


# -------------------------------------------------- b-field identity check

def b_field(U, gu, gv):
    """b = (U.grad u) grad v + (U.grad v) grad u - (grad u . grad v) U (rows)."""
    return (np.einsum("pa,pa->p", U, gu)[:, None] * gv + np.einsum("pa,pa->p", U, gv)[:, None] * gu
            - np.einsum("pa,pa->p", gu, gv)[:, None] * U)


def b_field_divergence(mesh: Mesh, values, u, v):
    """Per-triangle face flux of b (two-point Gauss per edge) and -int calA grad u . grad v.

    For P1 u, v and a P1 field U the two columns agree to roundoff.
    """
    g = mesh.grads
    gu = np.einsum("tia,ti->ta", g, u[mesh.tris])
    gv = np.einsum("tia,ti->ta", g, v[mesh.tris])
    D = np.einsum("tia,tib->tab", values[mesh.tris], g)
    rhs = -mesh.areas * np.einsum("ta,tab,tb->t", gv, calA(D), gu)
    flux = np.zeros(mesh.n_tris)
    xg = 0.5 * (1 + np.array([-1, 1]) / np.sqrt(3))
    for i in range(3):
        a_, b_ = mesh.tris[:, i], mesh.tris[:, (i + 1) % 3]
        e = mesh.nodes[b_] - mesh.nodes[a_]
        n = np.column_stack([e[:, 1], -e[:, 0]])  # outward for CCW, length |e|
        for s in xg:
            U = (1 - s) * values[a_] + s * values[b_]
            flux += 0.5 * np.einsum("pa,pa->p", b_field(U, gu, gv), n)
    return flux, rhs


# -------------------------------------------------------------------- probe

@dataclass
class ProbeResult:
    rows: list  # (r, S0, distributed part, source part, y_x, y_y)
    slope: float
    residual: float
    side: int
    midpoint: np.ndarray

    def table(self):
        return [(r, s) for r, s, *_ in self.rows]


def S0_probe(corr: VertexCorrespondence, side_index: int, r_list, ctx: GreenContext,
             fld: DisplacementField | None = None) -> ProbeResult:
    """S0(y_r, y_r) for y_r = P + r n(P), P the midpoint of the given side of P0.

    Offsets must lie in [10 h_loc, d0/8], h_loc the size of the mesh
    triangle containing y_r.  U is normalized by |V|.
    """
    p0 = ctx.p0
    if len(ctx.bg.interfaces) != 1:
        raise ValueError("the probe assumes a single interior interface")
    a_, b_ = p0.vertices[side_index], p0.vertices[(side_index + 1) % p0.n]
    P = 0.5 * (a_ + b_)
    n = p0.outward_normals()[side_index]
    if min(np.linalg.norm(p0.vertices - P, axis=1)) < ctx.a.d0 / ctx.c1:
        raise SourceTooCloseToVertex("probe midpoint too close to a vertex")
    if fld is None:
        fld = build_displacement(corr, p0, ctx.bg, ctx.a, mesh=ctx.mesh, check_bound=False)
    norm = corr.normV
    if norm == 0:
        norm = 1.0
    rows = []
    for r in sorted(float(x) for x in r_list):
        y = _interior_point(ctx, P + r * n)
        hl = ctx.local_size(y)
        if r < 10 * hl * (1 - 1e-9) or r > ctx.a.d0 / 8 * (1 + 1e-12):
            raise OffsetOutOfRange(f"offset {r:.4g} outside [10 h_loc, d0/8] = "
                                   f"[{10 * hl:.4g}, {ctx.a.d0 / 8:.4g}]")
        st = green_state(y, ctx)
        dist = distributed_S0(st, st, fld, norm)
        src = source_terms(st, st, fld, norm)
        rows.append((r, dist + src, dist, src, float(y[0]), float(y[1])))
    rs = np.array([r[0] for r in rows])
    vs = np.abs([r[1] for r in rows])
    if len(rows) >= 2 and np.all(vs > 0):
        slope = fit_slope(rs, vs)
        coef = np.polyfit(np.log(rs), np.log(vs), 1)
        resid = float(np.sqrt(np.mean((np.polyval(coef, np.log(rs)) - np.log(vs)) ** 2)))
    else:
        slope, resid = float("nan"), float("nan")
    return ProbeResult(rows, slope, resid, side_index, P)

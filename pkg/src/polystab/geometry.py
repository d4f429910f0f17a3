"""Layered backgrounds, admissible polygons and the distances between them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Polygon as ShapelyPolygon, box

from .errors import (CrossingMismatch, DistanceTooLarge, GeometryFormatError,
                     InvalidAprioriData, InvalidBackground, InvalidPolygon,
                     VertexCountMismatch, VertexOnInterface)
from .kernels import min_dist_to_segments

TOL = 1e-12


@dataclass(frozen=True)
class AprioriData:
    """Constants parameterizing the admissible class and the background."""

    N0: int
    d0: float
    r0: float
    K0: float
    L: float
    beta0: float
    c0: float
    k: float
    m: int

    def __post_init__(self):
        bad = []
        if self.N0 < 3:
            bad.append("N0 >= 3")
        for name in ("d0", "r0", "K0", "L", "c0", "k"):
            if not (getattr(self, name) > 0):
                bad.append(f"{name} > 0")
        if not (0 < self.beta0 <= math.pi / 2 + 1e-15):
            bad.append("0 < beta0 <= pi/2")
        if self.m < 1:
            bad.append("m >= 1")
        if not self.d0 < self.L:
            bad.append("d0 < L")
        if bad:
            raise InvalidAprioriData("violated: " + ", ".join(bad))

    @property
    def delta0(self) -> float:
        """Hausdorff radius below which vertices can be matched one to one."""
        return min(self.K0 * self.r0, self.d0 * math.sin(self.beta0) / 16.0)

    @property
    def C0(self) -> float:
        """Vertex matching constant sqrt(1 + 16 / sin^2 beta0)."""
        return math.sqrt(1.0 + 16.0 / math.sin(self.beta0) ** 2)


@dataclass(frozen=True)
class LayeredBackground:
    """Horizontal layers on (-L, L)^2: gammas[i] on omegas[i] < y < omegas[i+1]."""

    L: float
    omegas: tuple
    gammas: tuple

    def __post_init__(self):
        om = tuple(float(w) for w in self.omegas)
        ga = tuple(float(g) for g in self.gammas)
        object.__setattr__(self, "omegas", om)
        object.__setattr__(self, "gammas", ga)
        if len(om) != len(ga) + 1:
            raise InvalidBackground("need len(omegas) == len(gammas) + 1")
        if abs(om[0] + self.L) > TOL or abs(om[-1] - self.L) > TOL:
            raise InvalidBackground("omegas must start at -L and end at L")
        if any(b <= a for a, b in zip(om, om[1:])):
            raise InvalidBackground("omegas must be strictly increasing")
        if any(not g > 0 for g in ga):
            raise InvalidBackground("gammas must be positive")

    @property
    def m(self) -> int:
        return len(self.gammas)

    @property
    def interfaces(self) -> tuple:
        """Heights of the interior interfaces."""
        return self.omegas[1:-1]

    def layer_index(self, y):
        """0-based layer containing height y (values on an interface go up)."""
        y = np.asarray(y, dtype=float)
        idx = np.searchsorted(np.asarray(self.omegas[1:-1]), y, side="right")
        return idx

    def gamma_at(self, pts):
        pts = np.atleast_2d(pts)
        return np.asarray(self.gammas)[self.layer_index(pts[:, 1])]

    def layer_box(self, i) -> ShapelyPolygon:
        return box(-self.L, self.omegas[i], self.L, self.omegas[i + 1])


@dataclass(frozen=True)
class Polygon:
    """Simple polygon; vertices are stored counterclockwise.

    A clockwise input is reversed, which shifts vertex indices.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise InvalidPolygon("need at least 3 two-dimensional vertices")
        if not np.all(np.isfinite(v)):
            raise InvalidPolygon("vertex coordinates must be finite")
        if _signed_area(v) < 0:
            v = v[::-1].copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def seg_a(self):
        return self.vertices

    @property
    def seg_b(self):
        return np.roll(self.vertices, -1, axis=0)

    def side_lengths(self):
        return np.linalg.norm(self.seg_b - self.seg_a, axis=1)

    def area(self) -> float:
        return _signed_area(self.vertices)

    def angles(self):
        """Interior angle at each vertex, in (0, 2 pi)."""
        v = self.vertices
        d1 = np.roll(v, -1, axis=0) - v
        d2 = np.roll(v, 1, axis=0) - v
        cr = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        dt = np.einsum("ij,ij->i", d1, d2)
        return np.mod(np.arctan2(cr, dt), 2 * math.pi)

    def outward_normals(self):
        e = self.seg_b - self.seg_a
        n = np.column_stack([e[:, 1], -e[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def contains(self, pts):
        """Even-odd ray casting; points exactly on the boundary are unspecified."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        for (ax, ay), (bx, by) in zip(self.seg_a, self.seg_b):
            cond = (ay > y) != (by > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xc = ax + (y - ay) * (bx - ax) / (by - ay)
            inside ^= cond & (x < xc)
        return inside

    def boundary_distance(self, pts):
        return min_dist_to_segments(pts, self.seg_a, self.seg_b)

    def is_simple(self) -> bool:
        return _is_simple(self.vertices)

    def to_shapely(self) -> ShapelyPolygon:
        return ShapelyPolygon(self.vertices)

    def translated(self, v) -> "Polygon":
        return Polygon(self.vertices + np.asarray(v, dtype=float))

    def with_vertices(self, v) -> "Polygon":
        return Polygon(v)

    def to_list(self):
        return self.vertices.tolist()


def _signed_area(v) -> float:
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def segments_intersect(a, b, c, d) -> bool:
    """Closed segments ab and cd share a point."""
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0 and o2 < 0) or (o1 < 0 and o2 > 0)) and ((o3 > 0 and o4 < 0) or (o3 < 0 and o4 > 0)):
        return True
    return ((o1 == 0 and _on_segment(a, b, c)) or (o2 == 0 and _on_segment(a, b, d))
            or (o3 == 0 and _on_segment(c, d, a)) or (o4 == 0 and _on_segment(c, d, b)))


def _is_simple(v) -> bool:
    n = len(v)
    for i in range(n):
        a, b = v[i], v[(i + 1) % n]
        if np.all(a == b):
            return False
        for j in range(i + 1, n):
            c, d = v[j], v[(j + 1) % n]
            if j == i + 1 or (i == 0 and j == n - 1):
                # adjacent sides may only share their common vertex
                shared = b if j == i + 1 else a
                other = d if j == i + 1 else c
                far = a if j == i + 1 else b
                if _orient(far, shared, other) == 0 and np.dot(far - shared, other - shared) > 0:
                    return False
                continue
            if segments_intersect(a, b, c, d):
                return False
    return True


# ---------------------------------------------------------------- validation

@dataclass(frozen=True)
class ConstraintResult:
    name: str
    passed: bool
    value: float | None
    bound: float | None
    violation: str | None = None
    detail: str = ""


@dataclass(frozen=True)
class ClassAReport:
    results: tuple

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def violations(self):
        return [r.violation for r in self.results if not r.passed]

    def __getitem__(self, name) -> ConstraintResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def summary(self) -> str:
        lines = []
        for r in self.results:
            flag = "ok  " if r.passed else "FAIL"
            val = "-" if r.value is None else f"{r.value:.6g}"
            bnd = "-" if r.bound is None else f"{r.bound:.6g}"
            lines.append(f"{flag} {r.name:20s} value={val} bound={bnd} {r.detail}")
        return "\n".join(lines)


def merge_interface_kinks(p: Polygon, bg: LayeredBackground) -> tuple:
    """Drop vertices lying on an interface (kinks of a moved polygon).

    Returns the reduced polygon and a boolean mask of dropped vertices.
    """
    ifs = np.asarray(bg.interfaces)
    if len(ifs) == 0:
        return p, np.zeros(p.n, dtype=bool)
    on = np.min(np.abs(p.vertices[:, 1][:, None] - ifs[None, :]), axis=1) <= TOL
    if not on.any():
        return p, on
    keep = p.vertices[~on]
    if len(keep) < 3:
        raise InvalidPolygon("fewer than 3 vertices off the interfaces")
    return Polygon(keep), on


def validate_polygon(p: Polygon, bg: LayeredBackground, a: AprioriData,
                     allow_interface_vertices: bool = False) -> ClassAReport:
    """Evaluate every admissibility constraint and report the measured values.

    With ``allow_interface_vertices`` the vertices lying exactly on an
    interface are treated as kinks: the side, angle and interface-distance
    checks run on the polygon with those kinks removed.
    """
    res = []
    simple = p.is_simple()
    res.append(ConstraintResult("simple", simple, None, None, None if simple else "NonSimplePolygon"))
    q = p
    if allow_interface_vertices:
        q, kinks = merge_interface_kinks(p, bg)
        if kinks.any():
            res.append(ConstraintResult("interface_kinks", True, float(kinks.sum()), None,
                                        detail="vertices on interfaces treated as kinks"))
    res.append(ConstraintResult("side_count", q.n <= a.N0, float(q.n), float(a.N0),
                                None if q.n <= a.N0 else "TooManySides"))
    ls = float(q.side_lengths().min())
    side_ok = ls >= a.d0 - TOL
    res.append(ConstraintResult("side_length", side_ok, ls, a.d0, None if side_ok else "SideTooShort"))
    ang = q.angles()
    dev = min(float(ang.min()) - a.beta0, 2 * math.pi - a.beta0 - float(ang.max()),
              float(np.abs(ang - math.pi).min()) - a.beta0)
    ang_ok = dev >= -TOL
    res.append(ConstraintResult("angle", ang_ok, float(ang.min()), a.beta0,
                                None if ang_ok else "AngleViolation",
                                detail=f"slack={dev:.3g} max={float(ang.max()):.4g}"))
    res.append(ConstraintResult("lipschitz", side_ok and ang_ok, None, None,
                                None if side_ok and ang_ok else "LipschitzUnverified",
                                detail="derived from side and angle constraints"))
    gap = float(np.min(bg.L - np.abs(p.vertices).max(axis=1)))
    res.append(ConstraintResult("boundary_distance", gap >= a.d0 - TOL, gap, a.d0,
                                None if gap >= a.d0 - TOL else "TooCloseToBoundary"))
    ifs = np.asarray(bg.interfaces)
    if len(ifs):
        dv = float(np.min(np.abs(q.vertices[:, 1][:, None] - ifs[None, :])))
    else:
        dv = math.inf
    res.append(ConstraintResult("interface_distance", dv >= a.d0 / 2 - TOL, dv, a.d0 / 2,
                                None if dv >= a.d0 / 2 - TOL else "VertexNearInterface"))
    con = float(min(abs(a.k - g) for g in bg.gammas))
    res.append(ConstraintResult("contrast", con >= a.c0 - TOL, con, a.c0,
                                None if con >= a.c0 - TOL else "InsufficientContrast"))
    sp = float(np.min(np.diff(bg.omegas)))
    res.append(ConstraintResult("layer_spacing", sp >= a.d0 - TOL, sp, a.d0,
                                None if sp >= a.d0 - TOL else "LayersTooThin"))
    return ClassAReport(tuple(res))


def require_valid(p, bg, a, allow_interface_vertices=False) -> ClassAReport:
    rep = validate_polygon(p, bg, a, allow_interface_vertices)
    if not rep.ok:
        raise InvalidPolygon("class constraints violated: " + ", ".join(rep.violations()))
    return rep


# ------------------------------------------------------------------ distances

def _directed_hausdorff(A: Polygon, B: Polygon) -> float:
    """sup over the boundary of A of the distance to the boundary of B.

    Along a side of A the distance to B is the minimum of convex functions
    (one per side of B), so its maximum sits at a side endpoint or where two
    of the elementary distances (to a vertex or to a supporting line) agree.
    All such parameters are enumerated and the true distance is evaluated.
    """
    bv = B.vertices
    ba, bb = B.seg_a, B.seg_b
    nrm = B.outward_normals()
    off = np.einsum("ij,ij->i", nrm, ba)
    best = float(np.max(min_dist_to_segments(A.vertices, ba, bb)))
    iu, ju = np.triu_indices(len(bv), 1)
    for a, b in zip(A.seg_a, A.seg_b):
        e = b - a
        cand = []
        # vertex-vertex: |x - v|^2 = |x - w|^2 is linear in s
        dv = bv[ju] - bv[iu]
        den = 2.0 * dv @ e
        num = np.einsum("ij,ij->i", bv[ju], bv[ju]) - np.einsum("ij,ij->i", bv[iu], bv[iu]) - 2.0 * dv @ a
        ok = np.abs(den) > 1e-300
        cand.append(num[ok] / den[ok])
        # line-line: n_i.x - c_i = +-(n_j.x - c_j)
        li = nrm @ a - off
        le = nrm @ e
        for sgn in (1.0, -1.0):
            den = le[iu] - sgn * le[ju]
            num = -(li[iu] - sgn * li[ju])
            ok = np.abs(den) > 1e-300
            cand.append(num[ok] / den[ok])
        # vertex-line: |x - v|^2 = (n.x - c)^2 is quadratic in s
        w = a[None, :] - bv  # (nv, 2)
        qa = (e @ e) - le[None, :] ** 2
        qb = 2.0 * ((w @ e)[:, None] - li[None, :] * le[None, :])
        qc = np.einsum("ij,ij->i", w, w)[:, None] - li[None, :] ** 2
        qa = np.broadcast_to(qa, qb.shape).ravel()
        qb, qc = qb.ravel(), qc.ravel()
        disc = qb * qb - 4 * qa * qc
        good = (disc >= 0) & (np.abs(qa) > 1e-300)
        sq = np.sqrt(np.where(good, disc, 0.0))
        for sgn in (1.0, -1.0):
            cand.append(((-qb + sgn * sq) / (2 * np.where(good, qa, 1.0)))[good])
        lin = (np.abs(qa) <= 1e-300) & (np.abs(qb) > 1e-300)
        cand.append(-qc[lin] / qb[lin])
        s = np.concatenate(cand)
        s = s[(s > 0) & (s < 1)]
        if len(s):
            pts = a[None, :] + s[:, None] * e[None, :]
            best = max(best, float(np.max(min_dist_to_segments(pts, ba, bb))))
    return best


def hausdorff_distance(p0: Polygon, p1: Polygon) -> float:
    """Hausdorff distance between the two polygon boundaries."""
    return max(_directed_hausdorff(p0, p1), _directed_hausdorff(p1, p0))


def symmetric_difference_area(p0: Polygon, p1: Polygon) -> float:
    return float(p0.to_shapely().symmetric_difference(p1.to_shapely()).area)


def gamma_gap_integrals(p0: Polygon, p1: Polygon, bg: LayeredBackground, k: float) -> dict:
    """L1 and squared L2 distances between the two conductivity fields.

    The fields differ only on the symmetric difference, where the gap is
    k - gamma_i on layer i; pieces are clipped against the layers.
    """
    sd = p0.to_shapely().symmetric_difference(p1.to_shapely())
    l1 = l2sq = area = 0.0
    for i, g in enumerate(bg.gammas):
        ar = float(sd.intersection(bg.layer_box(i)).area)
        l1 += abs(k - g) * ar
        l2sq += (k - g) ** 2 * ar
        area += ar
    return {"l1": l1, "l2_sq": l2sq, "sym_diff_area": area}


# ------------------------------------------------------- crossings, matching

@dataclass(frozen=True)
class Crossing:
    point: np.ndarray
    side: int
    param: float
    interface: int  # index into bg.omegas


def interface_crossings(p: Polygon, bg: LayeredBackground, allow_interface_vertices=False) -> list:
    """Points where sides strictly cross an interior interface, in traversal order."""
    out = []
    v = p.vertices
    for i, w in enumerate(bg.omegas[1:-1], start=1):
        near = np.abs(v[:, 1] - w) <= TOL
        if near.any() and not allow_interface_vertices:
            raise VertexOnInterface(f"vertex {int(np.argmax(near))} lies on the interface y={w}")
    for j in range(p.n):
        a, b = v[j], v[(j + 1) % p.n]
        for i, w in enumerate(bg.omegas[1:-1], start=1):
            da, db = a[1] - w, b[1] - w
            if abs(da) <= TOL or abs(db) <= TOL:
                continue
            if (da < 0) != (db < 0):
                s = da / (da - db)
                pt = np.array([a[0] + s * (b[0] - a[0]), w])
                out.append(Crossing(pt, j, float(s), i))
    out.sort(key=lambda c: (c.side, c.param))
    return out


@dataclass(frozen=True)
class VertexCorrespondence:
    """Matched points: the N vertices first, then interface crossings.

    ``p0``/``p1`` have shape (M, 2); crossing rows carry the side of P0 they
    lie on and the interface index.
    """

    p0: np.ndarray
    p1: np.ndarray
    n_vertices: int
    crossing_side: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    crossing_param: np.ndarray = field(default_factory=lambda: np.zeros(0))
    crossing_interface: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    dH: float = 0.0
    shift: int = 0

    @property
    def M(self) -> int:
        return len(self.p0)

    @property
    def displacements(self):
        return self.p1 - self.p0

    @property
    def V(self):
        return self.displacements.ravel()

    @property
    def normV(self) -> float:
        return float(np.linalg.norm(self.V))

    def pair_distances(self):
        return np.linalg.norm(self.displacements, axis=1)

    def pairs(self):
        return list(zip(map(tuple, self.p0), map(tuple, self.p1)))

    def boundary_cycle(self):
        """Matched points of P0 in traversal order with their displacements.

        Returns (points, values, original_row_index).
        """
        N = self.n_vertices
        keys = [(j, 0.0) for j in range(N)]
        keys += [(int(s), float(t)) for s, t in zip(self.crossing_side, self.crossing_param)]
        order = sorted(range(self.M), key=lambda r: keys[r])
        order = np.array(order)
        return self.p0[order], self.displacements[order], order

    def scaled(self, c) -> "VertexCorrespondence":
        """Same P0 points with displacements multiplied by c."""
        return VertexCorrespondence(self.p0, self.p0 + c * self.displacements, self.n_vertices,
                                    self.crossing_side, self.crossing_param,
                                    self.crossing_interface, abs(c) * self.dH, self.shift)


def best_cyclic_shift(v0, v1) -> int:
    """Cyclic shift s minimizing sum_j |v1[(j+s) % N] - v0[j]|; smallest s on ties."""
    N = len(v0)
    costs = [float(np.sum(np.linalg.norm(np.roll(v1, -s, axis=0) - v0, axis=1))) for s in range(N)]
    best = min(costs)
    return next(s for s, c in enumerate(costs) if c <= best * (1 + 1e-14) + 1e-300)


def match_vertices(p0: Polygon, p1: Polygon, bg: LayeredBackground, a: AprioriData,
                   enforce_delta0: bool = True) -> VertexCorrespondence:
    """Pair vertices (and interface crossings) of two nearby polygons."""
    dH = hausdorff_distance(p0, p1)
    if enforce_delta0 and dH > a.delta0 + TOL:
        raise DistanceTooLarge(f"d_H = {dH:.6g} exceeds delta0 = {a.delta0:.6g}")
    if p0.n != p1.n:
        raise VertexCountMismatch(f"{p0.n} vs {p1.n} vertices")
    N = p0.n
    s = best_cyclic_shift(p0.vertices, p1.vertices)
    v1 = np.roll(p1.vertices, -s, axis=0)
    c0 = interface_crossings(p0, bg)
    c1 = _crossings_shifted(p1, bg, s)
    key1 = {(c.side, c.interface): c for c in c1}
    if len(c0) != len(c1) or any((c.side, c.interface) not in key1 for c in c0):
        raise CrossingMismatch(f"{len(c0)} crossings on P0 vs {len(c1)} on P1")
    P0 = [p0.vertices] + [c.point[None] for c in c0]
    P1 = [v1] + [key1[(c.side, c.interface)].point[None] for c in c0]
    return VertexCorrespondence(
        np.vstack(P0), np.vstack(P1), N,
        np.array([c.side for c in c0], dtype=int),
        np.array([c.param for c in c0]),
        np.array([c.interface for c in c0], dtype=int), dH, s)


def _crossings_shifted(p1: Polygon, bg, s):
    # re-index sides of P1 so that side j runs from vertex j+s to j+s+1
    cs = interface_crossings(p1, bg)
    N = p1.n
    return [Crossing(c.point, (c.side - s) % N, c.param, c.interface) for c in cs]


def moved_polygon(corr: VertexCorrespondence, t: float) -> Polygon:
    """Image of P0 under the interpolating family at parameter t.

    Crossings become vertices lying on their interface; the result is the
    M-gon with vertices P0_j + t (P1_j - P0_j) in traversal order.
    """
    pts, vals, order = corr.boundary_cycle()
    q = pts + t * vals
    cross = order >= corr.n_vertices
    q[cross, 1] = pts[cross, 1]  # crossings slide along their interface
    return Polygon(q)


# ------------------------------------------------------------- construction

def regular_polygon(n, center, radius, phase=0.0) -> Polygon:
    th = phase + 2 * np.pi * np.arange(n) / n
    return Polygon(np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)]))


def rectangle(x0, y0, x1, y1) -> Polygon:
    return Polygon([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def random_admissible_polygon(rng, bg, a, n=None, center=None, radius=(0.25, 0.45),
                              max_tries=2000) -> Polygon:
    """Star-shaped random polygon passing every admissibility check."""
    for _ in range(max_tries):
        nn = n if n is not None else int(rng.integers(3, a.N0 + 1))
        c = np.asarray(center, dtype=float) if center is not None else rng.uniform(-0.3, 0.3, 2) * bg.L
        gaps = rng.uniform(0.6, 1.4, nn)
        th = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(gaps) / gaps.sum()
        r = rng.uniform(radius[0], radius[1], nn) * bg.L
        p = Polygon(np.column_stack([c[0] + r * np.cos(th), c[1] + r * np.sin(th)]))
        if validate_polygon(p, bg, a).ok:
            return p
    raise InvalidPolygon("could not sample an admissible polygon")


def random_nearby_polygon(rng, p: Polygon, bg, a, max_shift, max_tries=2000) -> Polygon:
    """Admissible polygon with each vertex moved by at most ``max_shift``."""
    for _ in range(max_tries):
        rad = max_shift * np.sqrt(rng.uniform(0, 1, p.n))
        th = rng.uniform(0, 2 * np.pi, p.n)
        q = Polygon(p.vertices + np.column_stack([rad * np.cos(th), rad * np.sin(th)]))
        if validate_polygon(q, bg, a).ok:
            try:
                interface_crossings(q, bg)
            except VertexOnInterface:
                continue
            return q
    raise InvalidPolygon("could not sample a nearby admissible polygon")


# ------------------------------------------------------------------- JSON I/O

@dataclass(frozen=True)
class Scene:
    bg: LayeredBackground
    k: float
    polygon: Polygon | None

    def to_dict(self) -> dict:
        return {"L": self.bg.L, "omegas": list(self.bg.omegas), "gammas": list(self.bg.gammas),
                "k": self.k, "vertices": None if self.polygon is None else self.polygon.to_list()}


def _num(obj, key):
    if key not in obj:
        raise GeometryFormatError(key, "missing")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise GeometryFormatError(key, f"expected a finite number, got {v!r}")
    return float(v)


def _numlist(obj, key, min_len=1):
    if key not in obj:
        raise GeometryFormatError(key, "missing")
    v = obj[key]
    if not isinstance(v, list) or len(v) < min_len:
        raise GeometryFormatError(key, f"expected a list of at least {min_len} numbers")
    for x in v:
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            raise GeometryFormatError(key, f"non-numeric entry {x!r}")
    return [float(x) for x in v]


def scene_from_dict(obj) -> Scene:
    if not isinstance(obj, dict):
        raise GeometryFormatError("<root>", "expected a JSON object")
    L = _num(obj, "L")
    if L <= 0:
        raise GeometryFormatError("L", "must be positive")
    omegas = _numlist(obj, "omegas", 2)
    gammas = _numlist(obj, "gammas", 1)
    k = _num(obj, "k")
    try:
        bg = LayeredBackground(L, tuple(omegas), tuple(gammas))
    except InvalidBackground as exc:
        raise GeometryFormatError("omegas" if "omegas" in str(exc) else "gammas", str(exc)) from None
    verts = obj.get("vertices")
    poly = None
    if verts is not None:
        if (not isinstance(verts, list) or len(verts) < 3
                or any(not isinstance(q, list) or len(q) != 2 for q in verts)):
            raise GeometryFormatError("vertices", "expected a list of [x, y] pairs (at least 3)")
        try:
            poly = Polygon(np.array(verts, dtype=float))
        except (InvalidPolygon, ValueError, TypeError) as exc:
            raise GeometryFormatError("vertices", str(exc)) from None
    return Scene(bg, k, poly)


def polygon_from_shapely(g) -> Polygon:
    coords = np.asarray(g.exterior.coords)[:-1]
    return Polygon(coords)


def polygonize_faces(p0: Polygon, p1: Polygon, bg: LayeredBackground):
    """Faces of the overlay of both boundaries and the interfaces (shapely)."""
    lines = [shapely.LineString(np.vstack([p.vertices, p.vertices[:1]])) for p in (p0, p1)]
    lines.append(box(-bg.L, -bg.L, bg.L, bg.L).exterior)
    for w in bg.interfaces:
        lines.append(shapely.LineString([(-bg.L, w), (bg.L, w)]))
    merged = shapely.unary_union(lines)
    return list(shapely.polygonize([merged]).geoms)

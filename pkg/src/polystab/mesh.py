"""Conforming triangulations of the layered square with an optional inclusion.

Triangulation itself is delegated to Shewchuk's Triangle (``triangle``
package).  This module prepares the planar straight-line graph (outer
boundary, interfaces, polygon sides, interface crossings), drives the
refinement passes and recovers tags, boundary cycles and constraint edges.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import triangle

from .errors import InvalidPolygon, RefinementStall
from .geometry import TOL, LayeredBackground, Polygon, interface_crossings
from .kernels import PointLocator, p1_geometry

OUTER = 1  # on the boundary of Omega and of the computational domain
CHIMNEY_WALL = 2  # chimney boundary (computational domain only)
CHIMNEY_BASE = 3  # top of Omega under the chimney (interior segment)
EDGE_SLACK = 1.05
INTERFACE = 10  # + interface index
SIDE = 1000  # + polygon side index


@dataclass(eq=False)
class Mesh:
    nodes: np.ndarray
    tris: np.ndarray
    layer: np.ndarray
    inside: np.ndarray
    chimney: np.ndarray
    boundary_nodes: np.ndarray
    dirichlet_nodes: np.ndarray
    edges: np.ndarray
    edge_markers: np.ndarray
    bg: LayeredBackground
    polygon: Polygon | None = None
    h: float = 0.0
    chimney_halfwidth: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_tris(self) -> int:
        return len(self.tris)

    @cached_property
    def geometry(self):
        """(barycentric gradients (m,3,2), signed areas (m,))."""
        return p1_geometry(self.nodes, self.tris)

    @property
    def grads(self):
        return self.geometry[0]

    @property
    def areas(self):
        return self.geometry[1]

    @cached_property
    def centroids(self):
        return self.nodes[self.tris].mean(axis=1)

    @cached_property
    def interior_nodes(self):
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.dirichlet_nodes] = False
        return np.flatnonzero(mask)

    @cached_property
    def locator(self) -> PointLocator:
        return PointLocator(self.nodes, self.tris)

    @cached_property
    def mesh_id(self) -> str:
        hsh = hashlib.sha1(np.ascontiguousarray(self.nodes).tobytes())
        hsh.update(np.ascontiguousarray(self.tris).tobytes())
        return hsh.hexdigest()[:16]

    @cached_property
    def boundary_signature(self) -> str:
        """Hash of the ordered boundary coordinates (identifies the trace space)."""
        pts = np.round(self.nodes[self.boundary_nodes], 12)
        return hashlib.sha1(np.ascontiguousarray(pts).tobytes()).hexdigest()[:16]

    def edges_with_marker(self, lo, hi=None):
        hi = lo if hi is None else hi
        sel = (self.edge_markers >= lo) & (self.edge_markers <= hi)
        return self.edges[sel], self.edge_markers[sel]

    def nodes_with_marker(self, lo, hi=None):
        e, _ = self.edges_with_marker(lo, hi)
        return np.unique(e)

    @cached_property
    def polygon_nodes(self):
        return self.nodes_with_marker(SIDE, 10 ** 9)

    @cached_property
    def interface_nodes(self):
        return self.nodes_with_marker(INTERFACE, SIDE - 1)

    def all_edges(self):
        e = np.sort(np.vstack([self.tris[:, [0, 1]], self.tris[:, [1, 2]], self.tris[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    def edge_lengths(self):
        e = self.all_edges()
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def min_angle(self) -> float:
        p = self.nodes[self.tris]
        ang = []
        for i in range(3):
            a, b, c = p[:, i], p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            u, v = b - a, c - a
            cosv = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang.append(np.arccos(np.clip(cosv, -1, 1)))
        return float(np.degrees(np.min(ang)))

    def stats(self) -> dict:
        el = self.edge_lengths()
        return {"nodes": int(self.n_nodes), "triangles": int(self.n_tris),
                "boundary_nodes": int(len(self.boundary_nodes)),
                "max_edge": float(el.max()), "min_edge": float(el.min()),
                "min_angle_deg": self.min_angle(), "mesh_id": self.mesh_id}

    def moved(self, new_nodes) -> "Mesh":
        """Same connectivity and tags on displaced node positions."""
        return Mesh(np.ascontiguousarray(new_nodes, dtype=float), self.tris, self.layer, self.inside,
                    self.chimney, self.boundary_nodes, self.dirichlet_nodes, self.edges,
                    self.edge_markers, self.bg, None, self.h, self.chimney_halfwidth,
                    dict(self.meta, moved_from=self.mesh_id))

    def find_nodes(self, pts, tol=1e-10):
        """Index of the mesh node at each given point (error if absent)."""
        pts = np.atleast_2d(pts)
        idx = np.empty(len(pts), dtype=np.int64)
        for r, p in enumerate(pts):
            d = np.linalg.norm(self.nodes - p, axis=1)
            j = int(np.argmin(d))
            if d[j] > tol:
                raise InvalidPolygon(f"point {p.tolist()} is not a mesh node (nearest at {d[j]:.3g})")
            idx[r] = j
        return idx

    # ------------------------------------------------------------- export
    def to_text(self) -> str:
        lines = [f"nodes {self.n_nodes} triangles {self.n_tris}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.nodes]
        lines += [f"{a} {b} {c} {int(l)} {int(i)}" for (a, b, c), l, i in zip(self.tris, self.layer, self.inside)]
        return "\n".join(lines) + "\n"

    def to_svg(self, values=None, size=600) -> str:
        from .export import mesh_svg
        return mesh_svg(self, values=values, size=size)


def _split_points(a, b, size_fn):
    """Points strictly inside segment ab, spaced no wider than the local size."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    length = float(np.linalg.norm(b - a))

    def at(s):
        return float(size_fn((a + (b - a) * min(1.0, s / length))[None])[0])

    pos = [0.0]
    while True:
        # the step respects the size at both of its ends
        step = min(at(pos[-1]), at(pos[-1] + at(pos[-1])))
        if pos[-1] + step >= length * (1 - 1e-12):
            end = pos[-1] + step
            break
        pos.append(pos[-1] + step)
    # shrink the walk uniformly so that it ends exactly at b
    return [a + (p / end) * (b - a) for p in pos[1:]]


class _Graph:
    """Planar straight-line graph with exact-coordinate point deduplication."""

    def __init__(self):
        self.pts = []
        self.index = {}
        self.segs = []
        self.marks = []

    def point(self, p) -> int:
        key = (float(p[0]), float(p[1]))
        if key not in self.index:
            self.index[key] = len(self.pts)
            self.pts.append(key)
        return self.index[key]

    def polyline(self, pts, marker):
        ids = [self.point(p) for p in pts]
        for i, j in zip(ids, ids[1:]):
            self.segs.append((i, j))
            self.marks.append(marker)
        return ids

    def segment(self, a, b, size_fn, marker):
        return self.polyline([a] + _split_points(a, b, size_fn) + [b], marker)


def triangulate(bg: LayeredBackground, polygon: Polygon | None = None, h: float = 0.1, *,
                chimney_halfwidth: float | None = None, size_fn=None, boundary_h: float | None = None,
                boundary_mult: int = 1, min_angle: float = 20.0, allow_interface_vertices: bool = False,
                max_passes: int = 12) -> Mesh:
    """Conforming quality triangulation of Omega (optionally with the probe chimney).

    Parameters
    ----------
    h : target maximum edge length.
    chimney_halfwidth : if given (d0), adds the chimney (-d0, d0) x [L, L + 2 d0]
        on top of Omega; the Dirichlet boundary becomes its outer boundary.
    size_fn : optional vectorized local size, points (n,2) -> sizes (n,); capped by h.
    boundary_h, boundary_mult : each straight piece of the outer boundary is split
        into ``boundary_mult * ceil(length / boundary_h)`` equal segments
        (defaults: ``h`` and 1).  Doubling ``boundary_mult`` nests the trace space.
    """
    L = bg.L
    if polygon is not None:
        if not polygon.is_simple():
            raise InvalidPolygon("polygon is not simple")
        if np.max(np.abs(polygon.vertices)) >= L - TOL:
            raise InvalidPolygon("polygon must lie strictly inside the domain")
    if size_fn is None:
        def local(p):
            return np.full(len(p), h)
    else:
        def local(p):
            return np.minimum(h, size_fn(p))
    bh = h if boundary_h is None else boundary_h
    g = _Graph()

    # outer boundary, counterclockwise from (-L, -L), split at interface ends
    ifs = list(bg.interfaces)
    d = chimney_halfwidth
    pieces = []
    pieces.append([(-L, -L), (L, -L)])
    right = [(L, -L)] + [(L, w) for w in ifs] + [(L, L)]
    pieces += [[p, q] for p, q in zip(right, right[1:])]
    if d is not None:
        top = [(L, L), (d, L), (-d, L), (-L, L)]
    else:
        top = [(L, L), (-L, L)]
    pieces += [[p, q] for p, q in zip(top, top[1:])]
    left = [(-L, L)] + [(-L, w) for w in reversed(ifs)] + [(-L, -L)]
    pieces += [[p, q] for p, q in zip(left, left[1:])]
    for p, q in pieces:
        length = math.dist(p, q)
        n = boundary_mult * max(1, math.ceil(length / bh - 1e-9))
        ts = np.linspace(0, 1, n + 1)[1:-1]
        inner = [np.array(p) + t * (np.array(q) - np.array(p)) for t in ts]
        under = d is not None and p[1] == L and q[1] == L and abs(p[0]) <= d and abs(q[0]) <= d
        g.polyline([p] + inner + [q], CHIMNEY_BASE if under else OUTER)
    if d is not None:
        ch = [(d, L), (d, L + 2 * d), (-d, L + 2 * d), (-d, L)]
        for p, q in zip(ch, ch[1:]):
            g.segment(p, q, local, CHIMNEY_WALL)

    # interfaces, split at crossings and at polygon vertices lying on them
    crossings = []
    if polygon is not None:
        crossings = interface_crossings(polygon, bg, allow_interface_vertices)
    for i, w in enumerate(bg.omegas[1:-1], start=1):
        xs = {-L, L}
        xs.update(float(c.point[0]) for c in crossings if c.interface == i)
        if polygon is not None and allow_interface_vertices:
            xs.update(float(v[0]) for v in polygon.vertices if abs(v[1] - w) <= TOL)
        xs = sorted(xs)
        for x0, x1 in zip(xs, xs[1:]):
            g.segment((x0, w), (x1, w), local, INTERFACE + i)

    # polygon sides, split at their crossings
    if polygon is not None:
        v = polygon.vertices.copy()
        if allow_interface_vertices:
            for i, w in enumerate(bg.interfaces):
                v[np.abs(v[:, 1] - w) <= TOL, 1] = w
        for j in range(polygon.n):
            a, b = v[j], v[(j + 1) % polygon.n]
            stops = [a] + [c.point for c in crossings if c.side == j] + [b]
            for p, q in zip(stops, stops[1:]):
                g.segment(p, q, local, SIDE + j)

    pslg = {"vertices": np.array(g.pts), "segments": np.array(g.segs, dtype=np.int64),
            "segment_markers": np.array(g.marks, dtype=np.int64)[:, None]}
    area = math.sqrt(3) / 4 * h * h
    opts = f"pq{min_angle:g}a{area:.17g}Y"
    out = triangle.triangulate(pslg, opts)
    for _ in range(max_passes):
        nodes = out["vertices"]
        tris = out["triangles"]
        target = _target_size(nodes, tris, local)
        p = nodes[tris]
        emax = np.max(np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2), axis=1)
        # fixed boundary segments of length h leave neighbours a few percent longer
        bad = emax > target * EDGE_SLACK
        if not bad.any():
            break
        # thin triangles can meet an area cap while an edge is still too long
        cur = 0.5 * np.abs((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                           - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
        tma = np.where(bad, np.minimum(0.7 * math.sqrt(3) / 4 * target ** 2, 0.5 * cur), -1.0)
        out = triangle.triangulate({"vertices": nodes, "triangles": tris, "segments": out["segments"],
                                    "segment_markers": out["segment_markers"],
                                    "triangle_max_area": tma}, f"rpq{min_angle:g}aY")
    else:
        raise RefinementStall(f"edge-length target not met after {max_passes} passes "
                              f"(worst ratio {float(np.max(emax / target)):.3g})")
    nodes = np.array(out["vertices"], dtype=float)
    tris = np.array(out["triangles"], dtype=np.int64)
    segs = np.array(out["segments"], dtype=np.int64)
    marks = np.array(out["segment_markers"], dtype=np.int64).ravel()
    ang = _min_angle(nodes, tris)
    # boundary segments may not be split, which costs Triangle about a degree there
    if ang < min_angle - 2.0:
        raise RefinementStall(f"minimum angle {ang:.2f} deg below target {min_angle} deg")

    # snap interface nodes (Steiner midpoints can be off by an ulp)
    for i, w in enumerate(bg.omegas[1:-1], start=1):
        ids = np.unique(segs[marks == INTERFACE + i])
        nodes[ids, 1] = w
    # orientation
    p = nodes[tris]
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    cen = nodes[tris].mean(axis=1)
    chim = cen[:, 1] > L
    layer = np.where(chim, bg.m - 1, bg.layer_index(cen[:, 1]))
    inside = polygon.contains(cen) if polygon is not None else np.zeros(len(tris), dtype=bool)

    start = g.index[(-L, -L)]
    bnodes = _walk_cycle(segs, marks, {OUTER, CHIMNEY_BASE}, start, nodes)
    dnodes = _walk_cycle(segs, marks, {OUTER, CHIMNEY_WALL}, start, nodes) if d is not None else bnodes
    return Mesh(nodes, tris, layer.astype(np.int64), inside, chim, bnodes, dnodes, segs, marks, bg,
                polygon, h, d, {"opts": opts, "n_crossings": len(crossings), "min_angle_deg": ang})


def retriangulate(mesh: Mesh, nodes, polygon: Polygon | None = None) -> Mesh:
    """Constrained Delaunay triangulation of moved nodes with the same segments.

    Connectivity is rebuilt from scratch (no Steiner points, so node order
    and the boundary cycle are kept); it matches ``mesh`` for small moves
    and flips edges once the moved cloud leaves the Delaunay regime.
    """
    nodes = np.asarray(nodes, dtype=float)
    out = triangle.triangulate({"vertices": nodes, "segments": mesh.edges,
                                "segment_markers": mesh.edge_markers[:, None]}, "pY")
    if len(out["vertices"]) != len(nodes):
        raise RefinementStall("retriangulation inserted points; the moved segments intersect")
    tris = np.array(out["triangles"], dtype=np.int64)
    p = nodes[tris]
    det = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    bg = mesh.bg
    cen = nodes[tris].mean(axis=1)
    chim = cen[:, 1] > bg.L
    layer = np.where(chim, bg.m - 1, bg.layer_index(cen[:, 1]))
    poly = polygon if polygon is not None else mesh.polygon
    inside = poly.contains(cen) if poly is not None else np.zeros(len(tris), dtype=bool)
    meta = dict(mesh.meta, retriangulated=True)
    return Mesh(nodes, tris, layer.astype(np.int64), inside, chim, mesh.boundary_nodes, mesh.dirichlet_nodes,
                mesh.edges, mesh.edge_markers, bg, poly, mesh.h, mesh.chimney_halfwidth, meta)


def _target_size(nodes, tris, local):
    p = nodes[tris]
    s = local(p.reshape(-1, 2)).reshape(-1, 3)
    return np.minimum(s.min(axis=1), local(p.mean(axis=1)))


def _min_angle(nodes, tris) -> float:
    p = nodes[tris]
    best = 180.0
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        best = min(best, float(np.degrees(np.arccos(np.clip(c, -1, 1))).min()))
    return best


def _walk_cycle(segs, marks, allowed, start, nodes):
    """Counterclockwise node cycle through segments with the allowed markers."""
    sel = segs[np.isin(marks, list(allowed))]
    nbr = {}
    for a, b in sel:
        nbr.setdefault(int(a), []).append(int(b))
        nbr.setdefault(int(b), []).append(int(a))
    # from the lower-left corner the counterclockwise step goes right
    cand = nbr[start]
    nxt = max(cand, key=lambda j: (nodes[j, 0], -nodes[j, 1]))
    cyc = [start]
    prev, cur = start, nxt
    while cur != start:
        cyc.append(cur)
        opts = [j for j in nbr[cur] if j != prev]
        if len(opts) != 1:
            raise RefinementStall("boundary cycle is not a simple closed curve")
        prev, cur = cur, opts[0]
    return np.array(cyc, dtype=np.int64)


def trace_matrices(pts):
    """P1 mass and arc-length stiffness on the closed polyline through pts."""
    n = len(pts)
    ell = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    i = np.arange(n)
    j = (i + 1) % n
    np.add.at(M, (i, i), ell / 3)
    np.add.at(M, (j, j), ell / 3)
    np.add.at(M, (i, j), ell / 6)
    np.add.at(M, (j, i), ell / 6)
    np.add.at(K, (i, i), 1 / ell)
    np.add.at(K, (j, j), 1 / ell)
    np.add.at(K, (i, j), -1 / ell)
    np.add.at(K, (j, i), -1 / ell)
    return M, K


def boundary_trace_space(mesh: Mesh):
    """P1 mass and arc-length Laplace-Beltrami matrices on the closed boundary.

    Returns (M_b, K_b, boundary node indices) with dense matrices ordered
    along ``mesh.boundary_nodes``.
    """
    M, K = trace_matrices(mesh.nodes[mesh.boundary_nodes])
    return M, K, mesh.boundary_nodes


def boundary_prolongation(coarse: Mesh, fine: Mesh):
    """Interpolation matrix from coarse to fine boundary P1 traces (nested cycles)."""
    cb = coarse.nodes[coarse.boundary_nodes]
    fb = fine.nodes[fine.boundary_nodes]
    nc = len(cb)
    P = np.zeros((len(fb), nc))
    seg_len = np.linalg.norm(np.roll(cb, -1, axis=0) - cb, axis=1)
    for r, x in enumerate(fb):
        d = np.linalg.norm(cb - x, axis=1)
        j = int(np.argmin(d))
        if d[j] <= 1e-12:
            P[r, j] = 1.0
            continue
        for s in (j, (j - 1) % nc):
            a, b = cb[s], cb[(s + 1) % nc]
            t = float(np.dot(x - a, b - a) / seg_len[s] ** 2)
            off = np.linalg.norm(a + t * (b - a) - x)
            if -1e-12 <= t <= 1 + 1e-12 and off <= 1e-10:
                P[r, s] = 1 - t
                P[r, (s + 1) % nc] = t
                break
        else:
            raise ValueError("boundary cycles are not nested")
    return P

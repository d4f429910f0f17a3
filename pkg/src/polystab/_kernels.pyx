# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for P1 assembly, point location and segment distances.

Every function here has a numpy twin in ``_kernels_py`` with the same
signature; ``polystab.kernels`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def p1_geometry(const double[:, ::1] nodes, const cnp.int64_t[:, ::1] tris):
    """Barycentric gradients (m, 3, 2) and signed areas (m,) of P1 triangles."""
    cdef Py_ssize_t m = tris.shape[0], t
    cdef cnp.int64_t a, b, c
    cdef double x0, y0, x1, y1, x2, y2, det, inv
    grads_arr = np.empty((m, 3, 2), dtype=np.float64)
    area_arr = np.empty(m, dtype=np.float64)
    cdef double[:, :, ::1] g = grads_arr
    cdef double[::1] area = area_arr
    for t in range(m):
        a = tris[t, 0]
        b = tris[t, 1]
        c = tris[t, 2]
        x0 = nodes[a, 0]; y0 = nodes[a, 1]
        x1 = nodes[b, 0]; y1 = nodes[b, 1]
        x2 = nodes[c, 0]; y2 = nodes[c, 1]
        det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        area[t] = 0.5 * det
        inv = 1.0 / det
        g[t, 0, 0] = (y1 - y2) * inv
        g[t, 0, 1] = (x2 - x1) * inv
        g[t, 1, 0] = (y2 - y0) * inv
        g[t, 1, 1] = (x0 - x2) * inv
        g[t, 2, 0] = (y0 - y1) * inv
        g[t, 2, 1] = (x1 - x0) * inv
    return grads_arr, area_arr


def local_stiffness(const double[:, :, ::1] grads, const double[::1] area,
                    const double[:, :, ::1] coef):
    """Element matrices area * G C G^T for per-triangle 2x2 coefficients C."""
    cdef Py_ssize_t m = grads.shape[0], t, i, j
    cdef double c00, c01, c10, c11, gx, gy, hx, hy
    out_arr = np.empty((m, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for t in range(m):
        c00 = coef[t, 0, 0]; c01 = coef[t, 0, 1]
        c10 = coef[t, 1, 0]; c11 = coef[t, 1, 1]
        for i in range(3):
            gx = grads[t, i, 0]
            gy = grads[t, i, 1]
            for j in range(3):
                hx = grads[t, j, 0]
                hy = grads[t, j, 1]
                out[t, i, j] = area[t] * (gx * (c00 * hx + c01 * hy)
                                          + gy * (c10 * hx + c11 * hy))
    return out_arr


def locate(const double[:, ::1] pts, const double[:, ::1] nodes,
           const cnp.int64_t[:, ::1] tris, const cnp.int64_t[::1] cell_start,
           const cnp.int64_t[::1] cell_items, double x0, double y0, double cell,
           cnp.int64_t nx, cnp.int64_t ny, double tol):
    """Triangle index (or -1) and barycentric coordinates for each point."""
    cdef Py_ssize_t n = pts.shape[0], p, k
    cdef cnp.int64_t ix, iy, c, t, a, b, d
    cdef double px, py, ax, ay, bx, by, dx, dy, det, l0, l1, l2, best, worst
    idx_arr = np.full(n, -1, dtype=np.int64)
    bary_arr = np.zeros((n, 3), dtype=np.float64)
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef double[:, ::1] bary = bary_arr
    for p in range(n):
        px = pts[p, 0]
        py = pts[p, 1]
        ix = <cnp.int64_t>((px - x0) / cell)
        iy = <cnp.int64_t>((py - y0) / cell)
        if px < x0 or py < y0 or ix >= nx or iy >= ny:
            continue
        c = iy * nx + ix
        best = -1e300
        for k in range(cell_start[c], cell_start[c + 1]):
            t = cell_items[k]
            a = tris[t, 0]; b = tris[t, 1]; d = tris[t, 2]
            ax = nodes[a, 0]; ay = nodes[a, 1]
            bx = nodes[b, 0]; by = nodes[b, 1]
            dx = nodes[d, 0]; dy = nodes[d, 1]
            det = (bx - ax) * (dy - ay) - (dx - ax) * (by - ay)
            l1 = ((px - ax) * (dy - ay) - (dx - ax) * (py - ay)) / det
            l2 = ((bx - ax) * (py - ay) - (px - ax) * (by - ay)) / det
            l0 = 1.0 - l1 - l2
            worst = l0
            if l1 < worst:
                worst = l1
            if l2 < worst:
                worst = l2
            if worst > best:
                best = worst
                if worst >= -tol:
                    idx[p] = t
                    bary[p, 0] = l0
                    bary[p, 1] = l1
                    bary[p, 2] = l2
                    if worst >= 0.0:
                        break
    return idx_arr, bary_arr


def min_dist_to_segments(const double[:, ::1] pts, const double[:, ::1] seg_a,
                         const double[:, ::1] seg_b):
    """Euclidean distance from each point to the nearest of the segments."""
    cdef Py_ssize_t n = pts.shape[0], ns = seg_a.shape[0], p, s
    cdef double px, py, ax, ay, ex, ey, ll, u, qx, qy, d2, best
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for p in range(n):
        px = pts[p, 0]
        py = pts[p, 1]
        best = 1e300
        for s in range(ns):
            ax = seg_a[s, 0]; ay = seg_a[s, 1]
            ex = seg_b[s, 0] - ax
            ey = seg_b[s, 1] - ay
            ll = ex * ex + ey * ey
            u = 0.0
            if ll > 0.0:
                u = ((px - ax) * ex + (py - ay) * ey) / ll
                if u < 0.0:
                    u = 0.0
                elif u > 1.0:
                    u = 1.0
            qx = ax + u * ex - px
            qy = ay + u * ey - py
            d2 = qx * qx + qy * qy
            if d2 < best:
                best = d2
        out[p] = sqrt(best)
    return out_arr

"""Numpy implementations of the compiled kernels (same signatures)."""
import numpy as np


def p1_geometry(nodes, tris):
    """Barycentric gradients (m, 3, 2) and signed areas (m,) of P1 triangles."""
    p0 = nodes[tris[:, 0]]
    p1 = nodes[tris[:, 1]]
    p2 = nodes[tris[:, 2]]
    det = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1])
    inv = 1.0 / det
    g = np.empty((len(tris), 3, 2))
    g[:, 0, 0] = (p1[:, 1] - p2[:, 1]) * inv
    g[:, 0, 1] = (p2[:, 0] - p1[:, 0]) * inv
    g[:, 1, 0] = (p2[:, 1] - p0[:, 1]) * inv
    g[:, 1, 1] = (p0[:, 0] - p2[:, 0]) * inv
    g[:, 2, 0] = (p0[:, 1] - p1[:, 1]) * inv
    g[:, 2, 1] = (p1[:, 0] - p0[:, 0]) * inv
    return g, 0.5 * det


def local_stiffness(grads, area, coef):
    """Element matrices area * G C G^T for per-triangle 2x2 coefficients C."""
    return area[:, None, None] * np.einsum("tia,tab,tjb->tij", grads, coef, grads)


def locate(pts, nodes, tris, cell_start, cell_items, x0, y0, cell, nx, ny, tol):
    """Triangle index (or -1) and barycentric coordinates for each point."""
    n = len(pts)
    idx = np.full(n, -1, dtype=np.int64)
    bary = np.zeros((n, 3))
    ix = np.floor((pts[:, 0] - x0) / cell).astype(np.int64)
    iy = np.floor((pts[:, 1] - y0) / cell).astype(np.int64)
    ok = (ix >= 0) & (iy >= 0) & (ix < nx) & (iy < ny)
    c = np.where(ok, iy * nx + ix, 0)
    counts = np.where(ok, cell_start[c + 1] - cell_start[c], 0)
    if counts.sum() == 0:
        return idx, bary
    # flatten all (point, candidate) pairs
    pid = np.repeat(np.arange(n), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    tid = cell_items[cell_start[c[pid]] + offs]
    a = nodes[tris[tid, 0]]
    b = nodes[tris[tid, 1]]
    d = nodes[tris[tid, 2]]
    p = pts[pid]
    det = (b[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (d[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    l1 = ((p[:, 0] - a[:, 0]) * (d[:, 1] - a[:, 1]) - (d[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1])) / det
    l2 = ((b[:, 0] - a[:, 0]) * (p[:, 1] - a[:, 1]) - (p[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
    l0 = 1.0 - l1 - l2
    worst = np.minimum(np.minimum(l0, l1), l2)
    # best candidate per point; first occurrence wins ties
    order = np.lexsort((np.arange(len(pid)), -worst, pid))
    first = np.ones(len(order), dtype=bool)
    first[1:] = pid[order[1:]] != pid[order[:-1]]
    sel = order[first]
    good = worst[sel] >= -tol
    sel = sel[good]
    idx[pid[sel]] = tid[sel]
    bary[pid[sel]] = np.column_stack([l0[sel], l1[sel], l2[sel]])
    return idx, bary


def min_dist_to_segments(pts, seg_a, seg_b, chunk=4096):
    """Euclidean distance from each point to the nearest of the segments."""
    out = np.empty(len(pts))
    e = seg_b - seg_a
    ll = np.einsum("ij,ij->i", e, e)
    safe = np.where(ll > 0, ll, 1.0)
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        w = p[:, None, :] - seg_a[None, :, :]
        u = np.einsum("psj,sj->ps", w, e) / safe
        u = np.where(ll > 0, np.clip(u, 0.0, 1.0), 0.0)
        q = w - u[..., None] * e[None]
        out[s:s + chunk] = np.sqrt(np.min(np.einsum("psj,psj->ps", q, q), axis=1))
    return out

"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``POLYSTAB_PURE=1``
forces the numpy implementation.  ``BACKEND`` names the active one.
"""
import os

import numpy as np

if os.environ.get("POLYSTAB_PURE", "") not in ("", "0"):
    from . import _kernels_py as _impl
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _kernels_py as _impl
        BACKEND = "python"


def p1_geometry(nodes, tris):
    return _impl.p1_geometry(np.ascontiguousarray(nodes, dtype=np.float64),
                             np.ascontiguousarray(tris, dtype=np.int64))


def local_stiffness(grads, area, coef):
    return _impl.local_stiffness(np.ascontiguousarray(grads, dtype=np.float64),
                                 np.ascontiguousarray(area, dtype=np.float64),
                                 np.ascontiguousarray(coef, dtype=np.float64))


def min_dist_to_segments(pts, seg_a, seg_b):
    pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
    return _impl.min_dist_to_segments(pts, np.ascontiguousarray(seg_a, dtype=np.float64),
                                      np.ascontiguousarray(seg_b, dtype=np.float64))


class PointLocator:
    """Bucket grid over triangle bounding boxes for batched point location."""

    def __init__(self, nodes, tris, cells_per_side=None):
        self.nodes = np.ascontiguousarray(nodes, dtype=np.float64)
        self.tris = np.ascontiguousarray(tris, dtype=np.int64)
        lo = self.nodes.min(axis=0)
        hi = self.nodes.max(axis=0)
        span = float(max(hi - lo)) * (1 + 1e-9) + 1e-300
        n = cells_per_side or max(1, int(np.sqrt(len(self.tris) / 2)))
        self.cell = span / n
        self.x0, self.y0 = float(lo[0]), float(lo[1])
        self.nx = int(np.floor((hi[0] - lo[0]) / self.cell)) + 1
        self.ny = int(np.floor((hi[1] - lo[1]) / self.cell)) + 1
        p = self.nodes[self.tris]
        eps = 1e-12 * span
        ix0 = np.floor((p[:, :, 0].min(1) - eps - self.x0) / self.cell).astype(np.int64).clip(0, self.nx - 1)
        ix1 = np.floor((p[:, :, 0].max(1) + eps - self.x0) / self.cell).astype(np.int64).clip(0, self.nx - 1)
        iy0 = np.floor((p[:, :, 1].min(1) - eps - self.y0) / self.cell).astype(np.int64).clip(0, self.ny - 1)
        iy1 = np.floor((p[:, :, 1].max(1) + eps - self.y0) / self.cell).astype(np.int64).clip(0, self.ny - 1)
        cells, items = [], []
        for t in range(len(self.tris)):
            xs = np.arange(ix0[t], ix1[t] + 1)
            ys = np.arange(iy0[t], iy1[t] + 1)
            cc = (ys[:, None] * self.nx + xs[None, :]).ravel()
            cells.append(cc)
            items.append(np.full(len(cc), t, dtype=np.int64))
        cells = np.concatenate(cells)
        items = np.concatenate(items)
        order = np.argsort(cells, kind="stable")
        self.cell_items = np.ascontiguousarray(items[order])
        counts = np.bincount(cells, minlength=self.nx * self.ny)
        self.cell_start = np.zeros(self.nx * self.ny + 1, dtype=np.int64)
        np.cumsum(counts, out=self.cell_start[1:])

    def locate(self, pts, tol=1e-10):
        """Return (triangle index or -1, barycentric coordinates) per point."""
        pts = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
        return _impl.locate(pts, self.nodes, self.tris, self.cell_start, self.cell_items,
                            self.x0, self.y0, self.cell, self.nx, self.ny, float(tol))

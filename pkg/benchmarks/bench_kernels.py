"""Compiled vs numpy kernels on a realistic mesh.

    python benchmarks/bench_kernels.py [--h 0.01] [--repeat 5]

Prints the best-of-N wall time of each kernel for both backends and checks
that they agree to roundoff.
"""
import argparse
import time

import numpy as np

from polystab import _kernels_py as pure
from polystab.geometry import LayeredBackground, rectangle
from polystab.mesh import triangulate

try:
    from polystab import _kernels as comp
except ImportError:  # extension not built
    comp = None


def best(fn, repeat):
    ts = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        ts.append(time.perf_counter() - t)
    return min(ts), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=float, default=0.01)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    bg = LayeredBackground(1.0, (-1.0, 0.0, 1.0), (1.0, 2.0))
    mesh = triangulate(bg, rectangle(-0.3, -0.3, 0.3, 0.3), args.h, allow_interface_vertices=True)
    nodes = np.ascontiguousarray(mesh.nodes)
    tris = np.ascontiguousarray(mesh.tris, dtype=np.int64)
    rng = np.random.default_rng(0)
    coef = np.ascontiguousarray(np.broadcast_to(np.eye(2), (len(tris), 2, 2)))
    pts = rng.uniform(-1, 1, (20000, 2))
    seg_a = rng.uniform(-0.5, 0.5, (8, 2))
    seg_b = rng.uniform(-0.5, 0.5, (8, 2))
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_tris} triangles")

    g, area = pure.p1_geometry(nodes, tris)
    g = np.ascontiguousarray(g)
    area = np.ascontiguousarray(np.abs(area))
    cases = {
        "p1_geometry": lambda m: m.p1_geometry(nodes, tris),
        "local_stiffness": lambda m: m.local_stiffness(g, area, coef),
        "min_dist_to_segments": lambda m: m.min_dist_to_segments(pts, seg_a, seg_b),
    }
    print(f"{'kernel':24s} {'numpy [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, call in cases.items():
        tp, op = best(lambda: call(pure), args.repeat)
        if comp is None:
            print(f"{name:24s} {1e3 * tp:12.2f} {'n/a':>12s}")
            continue
        tc, oc = best(lambda: call(comp), args.repeat)
        op = op if isinstance(op, tuple) else (op,)
        oc = oc if isinstance(oc, tuple) else (oc,)
        err = max(float(np.abs(np.asarray(a) - np.asarray(b)).max()) for a, b in zip(op, oc))
        print(f"{name:24s} {1e3 * tp:12.2f} {1e3 * tc:12.2f} {tp / tc:8.1f}   max diff {err:.1e}")

    # point location goes through the grid locator of each backend
    from polystab import kernels
    for label, mod in (("numpy", pure), ("cython", comp)):
        if mod is None:
            continue
        saved = kernels._impl
        kernels._impl = mod
        try:
            loc = kernels.PointLocator(nodes, tris)
            t, _ = best(lambda: loc.locate(pts), args.repeat)
        finally:
            kernels._impl = saved
        print(f"{'locate (' + label + ')':24s} {1e3 * t:12.2f}")


if __name__ == "__main__":
    main()

"""Atomic file output and minimal SVG rendering."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import numpy as np


def atomic_write(path, text: str):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    atomic_write(path, buf.getvalue())


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return "nan" if not np.isfinite(x) else repr(float(x))
    return x


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not serializable: {type(o)}")


def _colormap(t):
    # blue -> white -> red
    t = np.clip(t, 0, 1)
    r = np.where(t < 0.5, 2 * t, 1.0)
    b = np.where(t < 0.5, 1.0, 2 * (1 - t))
    g = 1 - np.abs(2 * t - 1)
    return [f"#{int(255 * a):02x}{int(255 * c):02x}{int(255 * e):02x}" for a, c, e in zip(r, g, b)]


class _Canvas:
    def __init__(self, lo, hi, size):
        self.lo = np.asarray(lo, float)
        span = float(max(np.asarray(hi) - self.lo))
        self.s = size / span
        self.hi = np.asarray(hi, float)
        self.w = int(round((self.hi[0] - self.lo[0]) * self.s))
        self.h = int(round((self.hi[1] - self.lo[1]) * self.s))
        self.items = []

    def xy(self, p):
        p = np.atleast_2d(p)
        return np.column_stack([(p[:, 0] - self.lo[0]) * self.s, (self.hi[1] - p[:, 1]) * self.s])

    def poly(self, pts, fill="none", stroke="black", width=0.5):
        q = " ".join(f"{x:.2f},{y:.2f}" for x, y in self.xy(pts))
        self.items.append(f'<polygon points="{q}" fill="{fill}" stroke="{stroke}" stroke-width="{width}"/>')

    def line(self, a, b, stroke="black", width=1.0):
        (x0, y0), (x1, y1) = self.xy(np.array([a, b]))
        self.items.append(f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                          f'stroke="{stroke}" stroke-width="{width}"/>')

    def circle(self, c, r=2.5, fill="black"):
        (x, y), = self.xy(np.array([c]))
        self.items.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{fill}"/>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">')
        return "\n".join([head] + self.items + ["</svg>"]) + "\n"


def mesh_svg(mesh, values=None, size=600, arrows=None) -> str:
    """Triangles colored by region (or by nodal ``values``), constraints drawn on top."""
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    cv = _Canvas(lo, hi, size)
    if values is not None:
        tv = np.asarray(values)[mesh.tris].mean(axis=1)
        span = float(tv.max() - tv.min()) or 1.0
        colors = _colormap((tv - tv.min()) / span)
    else:
        pal = ["#dde8f5", "#f5ecd9", "#e2f0dc", "#f2dcea", "#e9e9e9"]
        colors = ["#f7b2a8" if ins else pal[int(l) % len(pal)] for l, ins in zip(mesh.layer, mesh.inside)]
    for tri, col in zip(mesh.tris, colors):
        cv.poly(mesh.nodes[tri], fill=col, stroke="#888888" if values is None else col, width=0.2)
    for (a, b), mk in zip(mesh.edges, mesh.edge_markers):
        cv.line(mesh.nodes[a], mesh.nodes[b], stroke="#c0392b" if mk >= 1000 else "#222222",
                width=1.2 if mk >= 10 else 0.8)
    if arrows is not None:
        base, vec = arrows
        for p, v in zip(base, vec):
            cv.line(p, p + v, stroke="#1a5276", width=0.8)
    return cv.render()


def polygons_svg(L, polygons, interfaces=(), points=(), size=600, extra_lo=None, extra_hi=None) -> str:
    lo = np.array([-L, -L]) if extra_lo is None else np.asarray(extra_lo)
    hi = np.array([L, L]) if extra_hi is None else np.asarray(extra_hi)
    cv = _Canvas(lo, hi, size)
    cv.poly(np.array([[-L, -L], [L, -L], [L, L], [-L, L]]), fill="#fbfbfb")
    for w in interfaces:
        cv.line((-L, w), (L, w), stroke="#555555")
    colors = ["#c0392b", "#2874a6", "#229954", "#7d3c98", "#b9770e"]
    for i, p in enumerate(polygons):
        cv.poly(p.vertices, fill="none", stroke=colors[i % len(colors)], width=1.5)
    for p in points:
        cv.circle(p, 2.0, "#000000")
    return cv.render()

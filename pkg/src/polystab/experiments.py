"""Experiment recipes shared by the command line and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dtn import DtNSystem, star_norm
from .errors import PolystabError, ValidationError
from .forward import ConductivityField
from .geometry import (AprioriData, LayeredBackground, Polygon, gamma_gap_integrals,
                       hausdorff_distance, match_vertices, moved_polygon, random_admissible_polygon,
                       random_nearby_polygon, rectangle, symmetric_difference_area)
from .mesh import retriangulate, triangulate
from .perturbation import build_displacement, correspondence_for
from .shape_calculus import ShapeContext, fd_table, fit_slope

SWEEP_MODES = ("pullback", "retriangulate", "remesh")
SWEEP_HEADER = ("s", "dH", "star_norm", "ratio", "sym_diff_area", "l1", "l1_ratio",
                "l2_sq", "c0sq_area", "corollary_ok")


def default_apriori(bg: LayeredBackground, k: float, **over) -> AprioriData:
    """A priori pack used by the recipes unless a config overrides it."""
    c0 = min(abs(k - g) for g in bg.gammas)
    vals = dict(N0=6, d0=0.4, r0=0.4, K0=1.0, L=bg.L, beta0=math.pi / 4, c0=c0, k=k, m=bg.m)
    vals.update(over)
    return AprioriData(**vals)


def default_background(L=1.0) -> LayeredBackground:
    return LayeredBackground(L, (-L, 0.0, L), (1.0, 2.0))


# ------------------------------------------------------------ derivative check

GEOMETRIES = ("translation", "vertex", "shear")


def displacement_family(name: str, p0: Polygon, scale: float = 1.0):
    """Vertex displacements of the named test family.

    ``translation`` moves every vertex by the same vector, ``vertex`` moves
    one vertex, ``shear`` slides the sides crossing the interface.
    """
    v = p0.vertices
    d = np.zeros_like(v)
    if name == "translation":
        d[:] = [0.012, 0.007]
    elif name == "vertex":
        d[2] = [0.015, -0.01]
    elif name == "shear":
        d[:, 0] = 0.03 * v[:, 1] + 0.004
        d[:, 1] = 0.01 * v[:, 0]
    else:
        raise ValidationError(f"unknown geometry family {name!r}; expected one of {GEOMETRIES}")
    return scale * d


def derivative_check(bg, k, p0: Polygon, a: AprioriData, h: float, family: str, pairs: int = 5,
                     ts=(1e-1, 1e-2, 1e-3, 1e-4), seed: int = 0):
    """FD table of the pairing derivative for random boundary data.

    Returns (rows, slopes): rows are (pair, t, F(t), quotient, F'(0), error).
    """
    corr = correspondence_for(p0, bg, displacement_family(family, p0), exact=True)
    ctx = ShapeContext.build(bg, k, p0, corr, a, h, check_bound=False)
    rng = np.random.default_rng(seed)
    nb = len(ctx.boundary)
    rows, slopes = [], []
    for i in range(pairs):
        f, g = rng.standard_normal(nb), rng.standard_normal(nb)
        tab, slope = fd_table(ctx, f, g, ts)
        rows += [(i,) + r for r in tab]
        slopes.append(slope)
    return rows, slopes, ctx


# -------------------------------------------------------------- stability sweep

@dataclass
class SweepResult:
    rows: list
    max_ratio: float
    min_ratio: float
    max_l1_ratio: float
    min_l1_ratio: float
    mesh_stats: dict

    @property
    def ratio_spread(self):
        return self.max_ratio / self.min_ratio

    @property
    def l1_spread(self):
        return self.max_l1_ratio / self.min_l1_ratio

    def summary_row(self):
        return ("max", math.nan, math.nan, self.max_ratio, math.nan, math.nan, self.max_l1_ratio,
                math.nan, math.nan, all(r[-1] for r in self.rows))


def stability_sweep(p0: Polygon, p1: Polygon, steps: int, bg: LayeredBackground, k: float,
                    a: AprioriData, h: float, mode: str = "pullback", s_min: float = 0.1):
    """Distances between P0 and P^s along the interpolating family.

    ``pullback`` evaluates every Lambda_{P^s} on the moved reference mesh
    (one topology for all s), ``retriangulate`` rebuilds the connectivity of
    the moved nodes, ``remesh`` meshes each P^s afresh.  A fresh mesh adds a
    fixed O(h) operator offset that swamps ||.||_* at small distances, so
    ``remesh`` ratios are only meaningful once d_H is well above h.  Ratios
    and spreads are taken over s >= ``s_min``.
    """
    corr = match_vertices(p0, p1, bg, a)
    mesh = triangulate(bg, p0, h, allow_interface_vertices=True)
    fld = build_displacement(corr, p0, bg, a, mesh=mesh)
    sys0 = DtNSystem(mesh, ConductivityField(bg, p0, k))
    op0 = sys0.operator()
    rows = [(0.0, 0.0, 0.0, math.nan, 0.0, 0.0, math.nan, 0.0, 0.0, True)]
    for i in range(1, steps + 1):
        s = i / steps
        ps = moved_polygon(corr, s)
        if mode == "pullback":
            op = DtNSystem(fld.at(s).moved_mesh(), sys0.gamma).operator()
        elif mode == "remesh":
            m = triangulate(bg, ps, h, allow_interface_vertices=True)
            op = DtNSystem(m, ConductivityField(bg, ps, k)).operator()
        elif mode == "retriangulate":
            m = retriangulate(mesh, fld.at(s).moved_mesh().nodes, ps)
            op = DtNSystem(m, ConductivityField(bg, ps, k)).operator()
        else:
            raise ValidationError(f"unknown mode {mode!r}")
        dH = hausdorff_distance(p0, ps)
        sn = star_norm(op0, op)
        gaps = gamma_gap_integrals(p0, ps, bg, k)
        area = symmetric_difference_area(p0, ps)
        c0a = a.c0 ** 2 * area
        ok = gaps["l2_sq"] >= c0a - 1e-8 * max(1.0, c0a)
        rows.append((s, dH, sn, dH / sn, area, gaps["l1"], gaps["l1"] / sn, gaps["l2_sq"], c0a, ok))
    use = [r for r in rows if r[0] >= s_min - 1e-12]
    rat = [r[3] for r in use]
    l1r = [r[6] for r in use]
    return SweepResult(rows, max(rat), min(rat), max(l1r), min(l1r), mesh.stats())


def random_sweep_pair(rng, bg, a, shrink=0.8, max_tries=200):
    """Admissible pair with matching crossings and d_H <= shrink * delta0."""
    for _ in range(max_tries):
        p0 = random_admissible_polygon(rng, bg, a, radius=(0.25, 0.4))
        p1 = random_nearby_polygon(rng, p0, bg, a, shrink * a.delta0)
        try:
            match_vertices(p0, p1, bg, a)
        except PolystabError:
            continue
        return p0, p1
    raise ValidationError("could not sample a matched pair")


def square_pair(offset=(0.012, 0.008), half=0.3) -> tuple:
    p0 = rectangle(-half, -half, half, half)
    return p0, p0.translated(offset)


__all__ = ["SWEEP_HEADER", "SWEEP_MODES", "GEOMETRIES", "default_apriori", "default_background", "displacement_family",
           "derivative_check", "SweepResult", "stability_sweep", "random_sweep_pair", "square_pair",
           "fit_slope"]

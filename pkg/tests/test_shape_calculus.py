import dataclasses

import numpy as np
import pytest

from polystab.dtn import DtNSystem, pairing
from polystab.experiments import GEOMETRIES, default_apriori, derivative_check
from polystab.forward import ConductivityField, h1_norm, trace_of
from polystab.geometry import LayeredBackground, match_vertices, rectangle
from polystab.mesh import retriangulate
from polystab.shape_calculus import (F_value, ShapeContext, difference_quotient, dtn_derivative, fit_slope,
                                     gateaux, gateaux_at, material_derivative, material_flux,
                                     pullback_solution)

K = 3.0


@pytest.fixture(scope="module")
def setup():
    bg = LayeredBackground(1.0, (-1.0, 0.0, 1.0), (1.0, 2.0))
    a = default_apriori(bg, K)
    p0 = rectangle(-0.3, -0.3, 0.3, 0.3)
    corr = match_vertices(p0, p0.translated([0.012, 0.008]), bg, a)
    ctx = ShapeContext.build(bg, K, p0, corr, a, 0.05)
    rng = np.random.default_rng(7)
    nb = len(ctx.boundary)
    return ctx, rng.standard_normal(nb), rng.standard_normal(nb)


def _smooth(ctx):
    f = trace_of(ctx.mesh, lambda x, y: x + 0.3 * y * y, ctx.boundary)
    g = trace_of(ctx.mesh, lambda x, y: np.cos(y) + x * y, ctx.boundary)
    return f, g


def _scaled(ctx, s):
    fld = ctx.field
    return dataclasses.replace(fld, values=s * fld.values, control_values=s * fld.control_values)


@pytest.mark.parametrize("family", GEOMETRIES)
def test_fd_quotient_converges_linearly(bg, family):
    p0 = rectangle(-0.3, -0.3, 0.3, 0.3)
    _, slopes, _ = derivative_check(bg, K, p0, default_apriori(bg, K), 0.05, family, pairs=2)
    assert min(slopes) >= 0.9


def test_zero_direction_gives_zero(setup):
    ctx, f, g = setup
    z = ctx.with_field(_scaled(ctx, 0.0))
    assert gateaux(f, g, z).value == 0.0
    assert np.count_nonzero(dtn_derivative(z.field, z)) == 0
    assert difference_quotient(0.3, f, g, z) == pytest.approx(0.0, abs=1e-12)


def test_F0_agrees_across_modes(setup):
    ctx, f, g = setup
    want = pairing(ctx.sys0.operator(), f, g)
    for mode in ("pullback", "remesh", "retriangulate"):
        assert F_value(0.0, f, g, ctx, mode=mode) == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_derivative_is_symmetric_and_linear(setup):
    ctx, f, g = setup
    d = gateaux(f, g, ctx).value
    assert gateaux(g, f, ctx).value == pytest.approx(d, rel=1e-10)
    assert gateaux(f, g, ctx, field=_scaled(ctx, -2.5)).value == pytest.approx(-2.5 * d, rel=1e-12)
    assert gateaux(2 * f - g, g, ctx).value == pytest.approx(2 * d - gateaux(g, g, ctx).value, rel=1e-9)


def test_dtn_derivative_matches_pairing_derivative(setup):
    ctx, f, g = setup
    Lp = dtn_derivative(ctx.field, ctx)
    assert np.abs(Lp - Lp.T).max() <= 1e-12 * np.abs(Lp).max()
    assert g @ Lp @ f == pytest.approx(gateaux(f, g, ctx).value, rel=1e-10)
    e = np.eye(len(ctx.boundary))
    for a, b in [(0, 0), (3, 40), (17, 17), (len(e) - 1, 5)]:
        assert Lp[b, a] == pytest.approx(gateaux(e[a], e[b], ctx).value, rel=1e-10, abs=1e-14)


def test_derivative_is_local_to_the_strip(setup):
    ctx, f, g = setup
    per = gateaux(f, g, ctx).per_triangle
    assert np.all(per[~ctx.field.support_tris] == 0)
    # nothing reaches the outer boundary
    outer = np.isin(ctx.mesh.tris, ctx.boundary).any(axis=1)
    assert not np.any(per[outer])


def test_flux_of_material_derivative_equals_pairing_derivative(setup):
    ctx, f, g = setup
    ud = material_derivative(f, ctx)
    assert np.all(ud.coeffs[ctx.boundary] == 0)
    d = gateaux(f, g, ctx).value
    assert material_flux(ud, g, ctx) == pytest.approx(d, rel=1e-9)


def test_material_derivative_is_h1_limit(setup):
    ctx, f, _ = setup
    ud = material_derivative(f, ctx).coeffs
    u0 = ctx.extend(f)
    ts = [1e-1, 1e-2, 1e-3]
    errs = [h1_norm(ctx.mesh, (pullback_solution(t, f, ctx).coeffs - u0) / t - ud) for t in ts]
    assert fit_slope(ts, errs) >= 0.9


def test_telescoping_integral_of_the_derivative(setup):
    ctx, f, g = setup
    x, w = np.polynomial.legendre.leggauss(8)
    s, w = 0.5 * (x + 1), 0.5 * w
    jump = F_value(1.0, f, g, ctx) - F_value(0.0, f, g, ctx)
    tr = sum(wi * gateaux_at(si, f, g, ctx, strip="transport") for si, wi in zip(s, w))
    assert tr == pytest.approx(jump, rel=1e-8)
    fs, gs = _smooth(ctx)
    jump = F_value(1.0, fs, gs, ctx) - F_value(0.0, fs, gs, ctx)
    re = sum(wi * gateaux_at(si, fs, gs, ctx, strip="reextrude") for si, wi in zip(s, w))
    assert re == pytest.approx(jump, rel=2e-2)


def test_derivative_is_continuous_in_t(setup):
    ctx, f, g = setup
    d0 = gateaux(f, g, ctx).value
    t0 = np.arange(1, 10) / 10
    diffs = [abs(gateaux_at(t, f, g, ctx, strip="transport") - d0) for t in t0]
    assert fit_slope(t0, diffs) > 0
    assert diffs[0] < diffs[-1]


def test_operator_fd_on_retriangulated_meshes(setup):
    ctx, _, _ = setup
    L0 = ctx.sys0.operator().matrix
    Lp = dtn_derivative(ctx.field, ctx)
    ts = [1e-1, 1e-2, 1e-3]
    errs = []
    for t in ts:
        pt = ctx.moved_polygon(t)
        m = retriangulate(ctx.mesh, ctx.field.at(t).moved_mesh().nodes, pt)
        Lt = DtNSystem(m, ConductivityField(ctx.bg, pt, K)).operator().matrix
        errs.append(np.linalg.norm((Lt - L0) / t - Lp))
    assert fit_slope(ts, errs) >= 0.8


def test_pullback_and_remesh_self_converge(bg):
    a = default_apriori(bg, K)
    p0 = rectangle(-0.3, -0.3, 0.3, 0.3)
    corr = match_vertices(p0, p0.translated([0.012, 0.008]), bg, a)
    gaps = []
    for h in (0.1, 0.05):
        ctx = ShapeContext.build(bg, K, p0, corr, a, h)
        f, g = _smooth(ctx)
        gaps.append(abs(F_value(1.0, f, g, ctx) - F_value(1.0, f, g, ctx, mode="remesh")))
    assert np.log2(gaps[0] / gaps[1]) >= 0.9

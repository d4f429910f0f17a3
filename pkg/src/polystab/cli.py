"""Command-line entry point: ``polystab <command> --config cfg --out dir``.

Config files are ``key = value`` lines; ``#`` starts a comment.  Values
are parsed as JSON (numbers, arrays, true/false) and fall back to plain
strings.  Keys:

  geometry      path to a scene JSON (L, omegas, gammas, k, vertices)
  geometry1     second scene for pair commands (vertices only are used)
  h             mesh size (default 0.05)
  seed          RNG seed (default 0)
  mode          pullback | retriangulate | remesh (default pullback)
  apriori       JSON object overriding N0, d0, r0, K0, beta0, c0
  data          forward boundary datum: "x", "y" or "fourier:<n>" (default "x")
  family        derivative-check displacement: translation | vertex | shear
  pairs         derivative-check number of random (f, g) pairs (default 5)
  t_grid        derivative-check step sizes, decreasing (default [0.1,0.01,0.001,0.0001])
  steps         stability-sweep number of steps (default 10)
  side          greens-probe polygon side index (default 2)
  r_grid        greens-probe offsets, increasing
  h_min         greens-probe smallest local mesh size (default 5e-4)
  init_offset   reconstruct initial translation [dx, dy] (default 0.3 d0 along the diagonal)
  max_iter      reconstruct iteration cap (default 30)
  n_modes       reconstruct number of boundary current patterns (default 8)

Command-line flags ``--h``, ``--seed`` and ``--mode`` override the file.
A manifest JSON written next to the outputs holds the resolved config, so
``--config out/manifest.json`` reruns an experiment.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .dtn import DtNSystem
from .errors import GeometryFormatError, PolystabError, SolverError, ValidationError
from .experiments import SWEEP_HEADER, SWEEP_MODES, default_apriori, derivative_check, stability_sweep
from .export import atomic_write, polygons_svg, write_csv, write_json
from .forward import ConductivityField, solve_dirichlet, trace_of
from .geometry import require_valid, scene_from_dict
from .kernels import BACKEND
from .mesh import triangulate

log = logging.getLogger("polystab")

COMMANDS = ("forward", "dtn", "derivative-check", "stability-sweep", "greens-probe", "reconstruct")

CSV_HELP = {
    "forward": "solution.csv: x, y, u (nodal values); exact_error in summary.json when the linear datum is exact",
    "dtn": "dtn.json: matrix, boundary points, signature; dtn_stats.csv: symmetry, row_sum, min_eig",
    "derivative-check": "derivative_check.csv: pair, t, F, quotient, derivative, error, slope",
    "stability-sweep": "sweep.csv: " + ", ".join(SWEEP_HEADER) + " (last row: maxima)",
    "greens-probe": "probe.csv: r, S0, distributed, source_terms, y_x, y_y; slope in summary.json",
    "reconstruct": "iterations.csv: iteration, misfit, dH, mu, accepted; final.json: vertices",
}

DEFAULTS = dict(h=0.05, seed=0, mode="pullback", data="x", family="translation", pairs=5,
                t_grid=[1e-1, 1e-2, 1e-3, 1e-4], steps=10, side=2, h_min=5e-4, max_iter=30,
                n_modes=8)


@dataclass
class ExperimentConfig:
    command: str
    values: dict = field(default_factory=dict)
    out: str = "out"

    def __getitem__(self, key):
        return self.values[key] if key in self.values else DEFAULTS[key]

    def get(self, key, default=None):
        return self.values.get(key, DEFAULTS.get(key, default))

    def canonical(self) -> str:
        return json.dumps({"command": self.command, **self.values}, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config_text(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}: expected a JSON object")
        return dict(obj.get("config", obj))
    vals = parse_config_text(text)
    base = os.path.dirname(os.path.abspath(path))
    for key in ("geometry", "geometry1"):
        if key in vals and isinstance(vals[key], str) and not os.path.isabs(vals[key]):
            vals[key] = os.path.join(base, vals[key])
    return vals


def _check_grid(cfg, key, decreasing=False):
    g = cfg.get(key)
    if g is None:
        return
    if not isinstance(g, list) or not g or not all(isinstance(x, (int, float)) and x > 0 for x in g):
        raise ValidationError(f"{key}: expected a nonempty list of positive numbers")
    s = sorted(g, reverse=decreasing)
    if g != s:
        raise ValidationError(f"{key}: must be sorted {'decreasing' if decreasing else 'increasing'}")


def validate_config(cfg: ExperimentConfig):
    h = cfg["h"]
    if not isinstance(h, (int, float)) or not h > 0:
        raise ValidationError("h: must be positive")
    if cfg["mode"] not in SWEEP_MODES:
        raise ValidationError(f"mode: expected one of {', '.join(SWEEP_MODES)}")
    for key in ("pairs", "steps", "max_iter", "n_modes"):
        v = cfg[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ValidationError(f"{key}: expected a positive integer, got {v!r}")
    _check_grid(cfg, "t_grid", decreasing=True)
    _check_grid(cfg, "r_grid")
    for key in ("geometry", "geometry1"):
        p = cfg.get(key)
        if p is not None and not os.path.exists(p):
            raise ValidationError(f"{key}: file not found: {p}")


def _read_scene(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise GeometryFormatError("<json>", f"{path}: {exc}") from None
    return scene_from_dict(obj)


def _scene(cfg, key="geometry", need_polygon=True):
    path = cfg.get(key)
    if path is None:
        raise ValidationError(f"{key}: required for {cfg.command}")
    sc = _read_scene(path)
    if need_polygon and sc.polygon is None:
        raise GeometryFormatError("vertices", f"{path}: a polygon is required for {cfg.command}")
    return sc


def _apriori(cfg, sc):
    over = cfg.get("apriori") or {}
    if not isinstance(over, dict):
        raise ValidationError("apriori: expected a JSON object")
    return default_apriori(sc.bg, sc.k, **over)


def _boundary_datum(name, mesh):
    if name == "x":
        return trace_of(mesh, lambda x, y: x), (lambda p: p[:, 0])
    if name == "y":
        return trace_of(mesh, lambda x, y: y), (lambda p: p[:, 1])
    if isinstance(name, str) and name.startswith("fourier:"):
        try:
            n = int(name.split(":", 1)[1])
        except ValueError:
            raise ValidationError(f"data: bad Fourier index in {name!r}") from None
        return trace_of(mesh, lambda x, y: np.cos(n * np.arctan2(y, x))), None
    raise ValidationError(f"data: unknown boundary datum {name!r}")


# ------------------------------------------------------------------ commands

def cmd_forward(cfg, out):
    sc = _scene(cfg, need_polygon=False)
    mesh = triangulate(sc.bg, sc.polygon, cfg["h"], allow_interface_vertices=True)
    gamma = ConductivityField(sc.bg, sc.polygon, sc.k)
    f, exact = _boundary_datum(cfg["data"], mesh)
    sol = solve_dirichlet(mesh, gamma, f)
    summary = {"residual": sol.residual, "dmp_excess": sol.max_principle_excess}
    # u = x solves every layered problem; other linear data need one conductivity
    solvable = sc.polygon is None and (len(set(sc.bg.gammas)) == 1 or cfg["data"] == "x")
    if exact is not None and solvable:
        summary["exact_error"] = float(np.abs(sol.coeffs - exact(mesh.nodes)).max())
    write_csv(os.path.join(out, "solution.csv"), ("x", "y", "u"),
              np.column_stack([mesh.nodes, sol.coeffs]).tolist())
    atomic_write(os.path.join(out, "solution.svg"), mesh.to_svg(sol.coeffs))
    write_json(os.path.join(out, "summary.json"), summary)
    return mesh, summary


def cmd_dtn(cfg, out):
    sc = _scene(cfg, need_polygon=False)
    mesh = triangulate(sc.bg, sc.polygon, cfg["h"], allow_interface_vertices=True)
    op = DtNSystem(mesh, ConductivityField(sc.bg, sc.polygon, sc.k)).operator()
    A = op.matrix
    stats = {"n": op.n, "symmetry": float(np.abs(A - A.T).max() / np.abs(A).max()),
             "row_sum": float(np.abs(A.sum(axis=1)).max()),
             "min_eig": float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())}
    write_json(os.path.join(out, "dtn.json"), op.to_dict())
    write_csv(os.path.join(out, "dtn_stats.csv"), tuple(stats), [tuple(stats.values())])
    write_json(os.path.join(out, "summary.json"), stats)
    return mesh, stats


def cmd_derivative_check(cfg, out):
    sc = _scene(cfg)
    a = _apriori(cfg, sc)
    rows, slopes, ctx = derivative_check(sc.bg, sc.k, sc.polygon, a, cfg["h"], cfg["family"],
                                         int(cfg["pairs"]), tuple(cfg["t_grid"]), int(cfg["seed"]))
    table = [r + (slopes[r[0]],) for r in rows]
    write_csv(os.path.join(out, "derivative_check.csv"),
              ("pair", "t", "F", "quotient", "derivative", "error", "slope"), table)
    summary = {"slopes": slopes, "min_slope": min(slopes), "family": cfg["family"]}
    write_json(os.path.join(out, "summary.json"), summary)
    return ctx.mesh, summary


def cmd_stability_sweep(cfg, out):
    sc = _scene(cfg)
    sc1 = _scene(cfg, "geometry1")
    a = _apriori(cfg, sc)
    for p in (sc.polygon, sc1.polygon):
        require_valid(p, sc.bg, a)
    res = stability_sweep(sc.polygon, sc1.polygon, int(cfg["steps"]), sc.bg, sc.k, a, cfg["h"],
                          cfg["mode"])
    write_csv(os.path.join(out, "sweep.csv"), SWEEP_HEADER, res.rows + [res.summary_row()])
    summary = {"max_ratio": res.max_ratio, "ratio_spread": res.ratio_spread,
               "max_l1_ratio": res.max_l1_ratio, "l1_spread": res.l1_spread,
               "corollary_ok": all(r[-1] for r in res.rows)}
    write_json(os.path.join(out, "summary.json"), summary)
    return res.mesh_stats, summary


def cmd_greens_probe(cfg, out):
    from .greens import GreenContext, S0_probe
    from .perturbation import correspondence_for
    sc = _scene(cfg)
    a = _apriori(cfg, sc)
    p0 = sc.polygon
    side = int(cfg["side"])
    if not 0 <= side < p0.n:
        raise ValidationError(f"side: index {side} out of range for {p0.n} vertices")
    mid = 0.5 * (p0.vertices[side] + p0.vertices[(side + 1) % p0.n])
    h_min = float(cfg["h_min"])
    ctx = GreenContext.build(sc.bg, sc.k, p0, a, cfg["h"], focus=mid, h_min=h_min)
    r_grid = cfg.get("r_grid") or np.geomspace(10.5 * h_min, a.d0 / 8, 7).tolist()
    disp = np.zeros((p0.n, 2))
    nrm = p0.outward_normals()[side]
    disp[side] = disp[(side + 1) % p0.n] = nrm
    corr = correspondence_for(p0, sc.bg, disp)
    res = S0_probe(corr, side, r_grid, ctx)
    write_csv(os.path.join(out, "probe.csv"), ("r", "S0", "distributed", "source_terms", "y_x", "y_y"),
              res.rows)
    pts = [r[4:6] for r in res.rows]
    atomic_write(os.path.join(out, "probe.svg"),
                 polygons_svg(sc.bg.L, [p0], sc.bg.interfaces, points=pts))
    summary = {"slope": res.slope, "residual": res.residual, "side": side}
    write_json(os.path.join(out, "summary.json"), summary)
    return ctx.mesh, summary


def cmd_reconstruct(cfg, out):
    from .reconstruction import ReconContext, gauss_newton, synthetic_target
    sc = _scene(cfg)
    a = _apriori(cfg, sc)
    truth = sc.polygon
    ctx = ReconContext(sc.bg, sc.k, a, cfg["h"], n_modes=int(cfg["n_modes"]))
    off = cfg.get("init_offset")
    off = np.full(2, 0.3 * a.d0 / math.sqrt(2)) if off is None else np.asarray(off, dtype=float)
    target = synthetic_target(truth, ctx)
    lines = []

    def cb(rec):
        lines.append(json.dumps({k: v for k, v in rec.items()}, default=float))

    st = gauss_newton(truth.translated(off), target, ctx, max_iter=int(cfg["max_iter"]),
                      truth=truth, callback=cb)
    atomic_write(os.path.join(out, "iterations.jsonl"), "\n".join(lines) + "\n")
    write_csv(os.path.join(out, "iterations.csv"), ("iteration", "misfit", "dH", "mu", "accepted"),
              [(r["iteration"], r["misfit"], r["dH"], math.nan if r["mu"] is None else r["mu"],
                r["accepted"]) for r in st.history])
    err = float(np.linalg.norm(st.current.vertices - truth.vertices, axis=1).max())
    write_json(os.path.join(out, "final.json"), {"vertices": st.current.to_list()})
    atomic_write(os.path.join(out, "final.svg"),
                 polygons_svg(sc.bg.L, [truth, st.current], sc.bg.interfaces))
    summary = {"reason": st.reason, "iterations": st.iterations, "misfit": st.misfit,
               "max_vertex_error": err, "stability_ratio": st.stability_ratio(truth, target)}
    write_json(os.path.join(out, "summary.json"), summary)
    return ctx.mesh_for(st.current), summary


HANDLERS = {"forward": cmd_forward, "dtn": cmd_dtn, "derivative-check": cmd_derivative_check,
            "stability-sweep": cmd_stability_sweep, "greens-probe": cmd_greens_probe,
            "reconstruct": cmd_reconstruct}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit status."""
    try:
        validate_config(cfg)
        np.random.seed(int(cfg["seed"]))
        os.makedirs(cfg.out, exist_ok=True)
        t0 = time.perf_counter()
        mesh, summary = HANDLERS[cfg.command](cfg, cfg.out)
    except ValidationError as exc:
        print(f"polystab {cfg.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"polystab {cfg.command}: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except PolystabError as exc:
        print(f"polystab {cfg.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    stats = mesh if isinstance(mesh, dict) else mesh.stats()
    manifest = {"config": {"command": cfg.command, **cfg.values}, "config_hash": cfg.digest(),
                "version": __version__, "backend": BACKEND, "python": platform.python_version(),
                "numpy": np.__version__, "mesh": stats, "runtime_s": time.perf_counter() - t0,
                "outputs": _digests(cfg.out)}
    write_json(os.path.join(cfg.out, "manifest.json"), manifest)
    print(json.dumps(summary, default=float))
    return 0


def _digests(out):
    res = {}
    for name in sorted(os.listdir(out)):
        if name == "manifest.json" or name.startswith("."):
            continue
        with open(os.path.join(out, name), "rb") as fh:
            res[name] = hashlib.sha256(fh.read()).hexdigest()
    return res


def build_parser():
    p = argparse.ArgumentParser(prog="polystab", description=__doc__.split("\n", 1)[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="exit codes: 0 success, 2 invalid input, 3 solver failure")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name, help=CSV_HELP[name].split(":")[0], description=CSV_HELP[name])
        s.add_argument("--config", help="key = value config file or a manifest.json")
        s.add_argument("--out", default=None, help="output directory (default out/<command>)")
        s.add_argument("--h", type=float, default=None, help="mesh size")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--mode", choices=SWEEP_MODES, default=None)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        vals = load_config(args.config)
    except ValidationError as exc:
        print(f"polystab {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    vals.pop("command", None)
    for key in ("h", "seed", "mode"):
        v = getattr(args, key)
        if v is not None:
            vals[key] = v
    cfg = ExperimentConfig(args.command, vals, args.out or os.path.join("out", args.command))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())

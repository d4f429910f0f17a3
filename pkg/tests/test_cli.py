import json

import pytest

from polystab.cli import main

SQUARE = [[-0.3, -0.3], [0.3, -0.3], [0.3, 0.3], [-0.3, 0.3]]


def _scene(path, vertices=SQUARE, **over):
    obj = {"L": 1.0, "omegas": [-1, 0, 1], "gammas": [1.0, 2.0], "k": 3.0, "vertices": vertices}
    obj.update(over)
    path.write_text(json.dumps(obj))
    return path


def _cfg(path, **vals):
    path.write_text("# test config\n" + "".join(f"{k} = {json.dumps(v) if not isinstance(v, str) else v}\n"
                                                for k, v in vals.items()))
    return str(path)


def _run(tmp_path, command, name="out", **vals):
    cfg = _cfg(tmp_path / f"{name}.cfg", **vals)
    out = tmp_path / name
    return main([command, "--config", cfg, "--out", str(out)]), out


@pytest.mark.parametrize("omegas,gammas", [([-1, 1], [1.0]), ([-1, 0, 1], [1.0, 2.0])])
def test_forward_linear_datum_is_exact(tmp_path, omegas, gammas):
    _scene(tmp_path / "s.json", vertices=None, omegas=omegas, gammas=gammas)
    code, out = _run(tmp_path, "forward", geometry="s.json", data="x", h=0.1)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["exact_error"] <= 1e-10
    assert (out / "solution.csv").read_text().startswith("x,y,u")


def test_manifest_rerun_reproduces_outputs(tmp_path):
    _scene(tmp_path / "s.json")
    code, out = _run(tmp_path, "dtn", geometry="s.json", h=0.1)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["h"] == 0.1 and len(man["config_hash"]) == 64
    out2 = tmp_path / "again"
    assert main(["dtn", "--config", str(out / "manifest.json"), "--out", str(out2)]) == 0
    man2 = json.loads((out2 / "manifest.json").read_text())
    assert man2["outputs"] == man["outputs"]
    assert man2["config_hash"] == man["config_hash"]


def test_derivative_check_reports_linear_convergence(tmp_path):
    _scene(tmp_path / "s.json")
    code, out = _run(tmp_path, "derivative-check", geometry="s.json", family="vertex", pairs=2, h=0.1)
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["min_slope"] >= 0.9


def test_stability_sweep_outputs(tmp_path):
    _scene(tmp_path / "s.json")
    _scene(tmp_path / "s1.json", [[x + 0.012, y + 0.008] for x, y in SQUARE])
    code, out = _run(tmp_path, "stability-sweep", geometry="s.json", geometry1="s1.json", steps=3, h=0.1)
    assert code == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert rows[0].startswith("s,dH,star_norm,ratio") and len(rows) == 1 + 4 + 1
    assert json.loads((out / "summary.json").read_text())["corollary_ok"]


def test_malformed_scene_exits_2_naming_the_field(tmp_path, capsys):
    _scene(tmp_path / "bad.json", k="a")
    code, _ = _run(tmp_path, "forward", geometry="bad.json")
    assert code == 2
    assert "k" in capsys.readouterr().err


@pytest.mark.parametrize("vals,field", [({"h": -1}, "h"), ({"mode": "warp"}, "mode"),
                                        ({"t_grid": [0.001, 0.1]}, "t_grid"), ({"steps": 0}, "steps"),
                                        ({"geometry": "missing.json"}, "geometry")])
def test_invalid_config_exits_2(tmp_path, capsys, vals, field):
    _scene(tmp_path / "s.json")
    cfg = {"geometry": "s.json", **vals}
    code, _ = _run(tmp_path, "dtn", **cfg)
    assert code == 2
    assert field in capsys.readouterr().err


def test_flag_overrides_file(tmp_path):
    _scene(tmp_path / "s.json", vertices=None, omegas=[-1, 1], gammas=[1.0])
    cfg = _cfg(tmp_path / "c.cfg", geometry="s.json", h=0.5)
    out = tmp_path / "o"
    assert main(["forward", "--config", cfg, "--out", str(out), "--h", "0.2"]) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["h"] == 0.2


def test_unmatchable_pair_is_rejected(tmp_path):
    _scene(tmp_path / "s.json")
    _scene(tmp_path / "s1.json", [[x + 0.05, y] for x, y in SQUARE])
    code, _ = _run(tmp_path, "stability-sweep", geometry="s.json", geometry1="s1.json", steps=2, h=0.1)
    assert code == 2

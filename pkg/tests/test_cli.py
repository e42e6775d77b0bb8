import copy
import json
import math

import pytest

from tltreach import cli
from tltreach.cli import ScenarioError, main, packaged_scenarios, parse_scenario

BASE = {
    "name": "unit",
    "model": {"name": "integrator1d"},
    "grid": {"lo": [-2], "hi": [2], "n": [201]},
    "horizon": 1.0,
    "labeling": {
        "goal": {"type": "box", "lo": [-0.25], "hi": [0.25]},
        "a": {"type": "box", "lo": [-1.5], "hi": [-1.0]},
        "b": {"type": "box", "lo": [1.0], "hi": [1.5]},
    },
    "formula": "F goal",
    "simulation": {"z0": [1.0], "policy": {"type": "constant", "u": [1.0]}},
}


def scenario(tmp_path, name="sc", **changes):
    obj = copy.deepcopy(BASE)
    for key, value in changes.items():
        if isinstance(value, dict) and isinstance(obj.get(key), dict):
            obj[key].update(value)
        else:
            obj[key] = value
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(obj))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def built(tmp_path, capsys):
    art = tmp_path / "art"
    code, out, _ = run(capsys, "build", "--scenario", scenario(tmp_path), "--out", str(art))
    assert code == 0
    return art


def test_packaged_scenarios_listed():
    assert {"corridor", "parking_lite", "leaking_corner", "integrator_reach"} <= set(packaged_scenarios())


def test_build_writes_artifact(built):
    rep = json.loads((built / "report.json").read_text())
    assert rep["root_nonempty"] and rep["verdict"] == "U" and rep["gate"]
    assert rep["nodes"] == {"set": 3, "op": 1}
    assert len(rep["solves"]) == 1 and rep["construction_seconds"] > 0
    assert len(list((built / "fields").glob("*.bin"))) == 3
    tree = json.loads((built / "tree.json").read_text())
    assert tree["root"]["child"]["op"] == "until"


def test_rebuild_bit_identical(tmp_path, capsys, built):
    again = tmp_path / "again"
    assert run(capsys, "build", "--scenario", scenario(tmp_path), "--out", str(again))[0] == 0
    for f in (built / "fields").iterdir():
        assert (again / "fields" / f.name).read_bytes() == f.read_bytes()


def test_check(capsys, built):
    code, out, _ = run(capsys, "check", str(built))
    rep = json.loads(out)
    assert code == 0
    assert rep["nonEmpty"] and rep["verdict"] == "U" and rep["gate"]
    assert rep["nodes"]["verdict"] == "U"


@pytest.mark.parametrize("formula, verdict, code", [
    ("(F a) & (F b)", "O", 3),
    ("!((F a) & (F b))", "U", 0),
])
def test_leaking_corner_verdicts(tmp_path, capsys, formula, verdict, code):
    art = tmp_path / "art"
    assert run(capsys, "build", "--scenario", scenario(tmp_path, formula=formula), "--out", str(art))[0] == 0
    c, out, _ = run(capsys, "check", "--out", str(art))
    assert c == code and json.loads(out)["verdict"] == verdict


def test_ctrl(capsys, built):
    code, out, _ = run(capsys, "ctrl", str(built), "--state", "1.0", "--time", "0")
    cs = json.loads(out)
    assert code == 0 and len(cs["cells"]) == 1
    assert run(capsys, "ctrl", str(built), "--state", "1.9")[0] == 4
    assert run(capsys, "ctrl", str(built))[0] == 2
    assert run(capsys, "ctrl", str(built), "--state", "1,2")[0] == 2
    assert run(capsys, "ctrl", str(built), "--state", "9.0")[0] == 2


def test_simulate(capsys, built):
    code, out, _ = run(capsys, "simulate", str(built))
    assert code == 0 and json.loads(out)["satisfied"]
    assert (built / "trajectory.csv").read_text().startswith("t,x0,u0")
    assert json.loads((built / "verdict.json").read_text())["satisfied"]
    assert run(capsys, "simulate", str(built), "--state", "1.95")[0] == 4


def test_short_simulation_fails_monitor(tmp_path, capsys):
    art = tmp_path / "art"
    sim = {"z0": [1.0], "T": 0.2, "policy": {"type": "constant", "u": [1.0]}}
    run(capsys, "build", "--scenario", scenario(tmp_path, simulation=sim), "--out", str(art))
    code, out, _ = run(capsys, "simulate", str(art))
    assert code == 5 and not json.loads(out)["satisfied"]


def test_event_removing_every_branch(tmp_path, capsys):
    art = tmp_path / "art"
    sc = scenario(tmp_path, formula="(F a) | (F b)", horizon=0.5,
                  simulation={"z0": [1.6], "policy": {"type": "zero"}},
                  events=[{"time": 0.1, "removed": ["a", "b"]}])
    assert run(capsys, "build", "--scenario", sc, "--out", str(art))[0] == 0
    code, out, _ = run(capsys, "simulate", str(art))
    summary = json.loads(out)
    assert code == 4 and "infeasible" in summary["aborted"]


def test_unknown_atom(tmp_path, capsys):
    code, _, err = run(capsys, "build", "--scenario", scenario(tmp_path, formula="F nowhere"),
                       "--out", str(tmp_path / "x"))
    assert code == 2 and "'nowhere'" in err


def test_corrupt_artifact(capsys, built):
    field = sorted((built / "fields").glob("*.bin"))[0]
    field.write_bytes(field.read_bytes()[:-16])
    code, _, err = run(capsys, "check", str(built))
    assert code == 2 and "corrupt" in err
    (built / "tree.json").unlink()
    assert run(capsys, "check", str(built))[0] == 2


def test_missing_inputs(tmp_path, capsys):
    assert run(capsys, "build", "--scenario", "no_such_scenario", "--out", str(tmp_path))[0] == 2
    assert run(capsys, "build", "--out", str(tmp_path))[0] == 2
    assert run(capsys, "check")[0] == 2


def test_bad_thread_count(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("TLTREACH_THREADS", "many")
    code, _, err = run(capsys, "build", "--scenario", scenario(tmp_path), "--out", str(tmp_path / "a"))
    assert code == 2 and "TLTREACH_THREADS" in err


def test_export(capsys, built):
    code, out, _ = run(capsys, "export", str(built))
    manifest = json.loads(out)
    assert code == 0 and len(manifest["nodes"]) == 3
    assert all((built / "export" / n["csv"]).exists() for n in manifest["nodes"])
    assert manifest["root_slices"][-1]["time"] == pytest.approx(-1.0)


@pytest.mark.parametrize("change, path", [
    ({"grid": {"n": [2.5]}}, "$.grid.n"),
    ({"grid": {"lo": [-2, 0]}}, "$.grid.lo"),
    ({"horizon": "soon"}, "$.horizon"),
    ({"model": {"name": "hovercraft"}}, "$.model"),
    ({"formula": "F (goal"}, "$.formula"),
    ({"labeling": {"goal": {"type": "blob"}}}, "$.labeling.goal"),
    ({"solver": {"direction": "sideways"}}, "$.solver.direction"),
    ({"solver": {"cfl": 3}}, "$.solver"),
    ({"simulation": {"z0": [0, 0]}}, "$.simulation.z0"),
    ({"events": [{"time": 1, "removed": ["zz"]}]}, "$.events[0].removed"),
    ({"events": [{"removed": ["a"]}]}, "$.events[0].time"),
])
def test_validation_paths(change, path):
    obj = copy.deepcopy(BASE)
    for key, value in change.items():
        if isinstance(value, dict) and isinstance(obj.get(key), dict):
            obj[key] = {**obj[key], **value}
        else:
            obj[key] = value
    with pytest.raises(ScenarioError) as info:
        parse_scenario(obj)
    assert str(info.value).startswith(path)


def test_pi_literals():
    assert cli._num("-pi", "$") == -math.pi
    assert cli._num("pi/2", "$") == math.pi / 2
    assert cli._num("2*pi", "$") == 2 * math.pi
    with pytest.raises(ScenarioError):
        cli._num("tau", "$")
    with pytest.raises(ScenarioError):
        cli._num(True, "$")


@pytest.mark.slow
def test_parking_lite_pipeline(tmp_path, capsys):
    art = tmp_path / "parking"
    assert run(capsys, "build", "--scenario", "parking_lite", "--out", str(art))[0] == 0
    assert len(list((art / "fields").glob("*.bin"))) >= 3
    code, out, _ = run(capsys, "check", str(art))
    rep = json.loads(out)
    assert code == 0 and rep["nonEmpty"] is True and rep["verdict"] == "U"
    code, out, _ = run(capsys, "simulate", str(art))
    summary = json.loads(out)
    assert code == 0 and summary["satisfied"]
    assert summary["events"][0]["removed"] == ["passL"]

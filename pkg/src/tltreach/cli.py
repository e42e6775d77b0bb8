"""Scenario-driven command line: build, check, ctrl, simulate, export.

Exit codes: 0 success, 2 validation error or corrupt artifact, 3 gate
refusal, 4 infeasibility at run time, 5 monitor failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import shutil
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import formula as fm
from . import tlt as tltmod
from .approx import ApproxDirection
from .ctrlexists import annotate, ctrl_exists, gate
from .ctrlsynth import (InfeasibleQuery, SynthesisError, SynthesisRefused, least_restrictive_ctrl,
                        sample_random_control)
from .dynamics import ControlAffineModel, make_model
from .geometry import GeometryError, Labeling
from .grid import Grid, OutOfGridError, export_csv, load_field, project_min, save_field
from .hjsolver import SolveOptions
from .sim import PruneEvent, RunAborted, make_policy, monitor, run_closed_loop, verdict_json

log = logging.getLogger("tltreach")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GATE = 3
EXIT_INFEASIBLE = 4
EXIT_MONITOR = 5

THREADS_ENV = "TLTREACH_THREADS"


class ScenarioError(ValueError):
    """Invalid scenario; the message starts with the offending field path."""


class ArtifactError(ValueError):
    """Missing or corrupt build artifact."""


class CliExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# scenarios

_PI = re.compile(r"^\s*([+-]?)\s*(\d*\.?\d*)\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def _num(v: Any, path: str) -> float:
    """A number, or a multiple of pi written as e.g. ``"-pi"`` or ``"pi/2"``."""
    if isinstance(v, bool):
        raise ScenarioError(f"{path}: expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        m = _PI.match(v)
        if m:
            sign = -1.0 if m.group(1) == "-" else 1.0
            coef = float(m.group(2)) if m.group(2) not in ("", ".") else 1.0
            den = float(m.group(3)) if m.group(3) else 1.0
            return sign * coef * math.pi / den
    raise ScenarioError(f"{path}: expected a number, got {v!r}")


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected an object")
    if key not in obj:
        raise ScenarioError(f"{path}.{key}: missing")
    return obj[key]


def _vec(v: Any, path: str, n: int | None = None) -> list[float]:
    if not isinstance(v, list):
        raise ScenarioError(f"{path}: expected a list")
    if n is not None and len(v) != n:
        raise ScenarioError(f"{path}: expected {n} entries, got {len(v)}")
    return [_num(x, f"{path}[{i}]") for i, x in enumerate(v)]


@dataclass
class Scenario:
    name: str
    model: ControlAffineModel
    grid: Grid
    horizon: float
    labeling: Labeling
    formula: fm.Formula
    options: SolveOptions
    direction: ApproxDirection | None = None
    simulation: dict = field(default_factory=dict)
    events: list[PruneEvent] = field(default_factory=list)
    raw: dict = field(default_factory=dict)


def parse_scenario(obj: dict) -> Scenario:
    """Validate a scenario document; errors name the offending field path."""
    if not isinstance(obj, dict):
        raise ScenarioError("$: expected an object")
    m = _req(obj, "model", "$")
    name = _req(m, "name", "$.model")
    params = m.get("params", {})
    if not isinstance(params, dict):
        raise ScenarioError("$.model.params: expected an object")
    try:
        model = make_model(name, **{k: _num(v, f"$.model.params.{k}") for k, v in params.items()})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"$.model: {exc}") from None

    g = _req(obj, "grid", "$")
    n = _req(g, "n", "$.grid")
    if not isinstance(n, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in n):
        raise ScenarioError("$.grid.n: expected a list of integers")
    nd = len(n)
    lo = _vec(_req(g, "lo", "$.grid"), "$.grid.lo", nd)
    hi = _vec(_req(g, "hi", "$.grid"), "$.grid.hi", nd)
    periodic = g.get("periodic", [False] * nd)
    if not isinstance(periodic, list) or len(periodic) != nd:
        raise ScenarioError(f"$.grid.periodic: expected {nd} booleans")
    try:
        grid = Grid(tuple(lo), tuple(hi), tuple(n), tuple(bool(p) for p in periodic))
    except ValueError as exc:
        raise ScenarioError(f"$.grid: {exc}") from None
    if model.n_x != grid.ndim:
        raise ScenarioError(f"$.grid: model {name!r} has {model.n_x} states, grid has {grid.ndim} dimensions")

    horizon = _num(_req(obj, "horizon", "$"), "$.horizon")
    lab_obj = _req(obj, "labeling", "$")
    if not isinstance(lab_obj, dict):
        raise ScenarioError("$.labeling: expected an object")
    try:
        lab = Labeling.from_json(lab_obj, grid.ndim)
    except GeometryError as exc:
        raise ScenarioError(str(exc)) from None

    text = _req(obj, "formula", "$")
    if not isinstance(text, str):
        raise ScenarioError("$.formula: expected a string")
    try:
        f = fm.parse(text)
    except fm.FormulaSyntaxError as exc:
        raise ScenarioError(f"$.formula: {exc}") from None
    for atom in sorted(fm.atoms(f)):
        if atom not in lab:
            raise ScenarioError(f"$.formula: unknown atom {atom!r} (not in $.labeling)")

    s = obj.get("solver", {}) or {}
    direction = None
    if s.get("direction") is not None:
        try:
            direction = ApproxDirection.parse(str(s["direction"]))
        except ValueError:
            raise ScenarioError(f"$.solver.direction: unknown direction {s['direction']!r}") from None
    try:
        opts = SolveOptions(
            horizon,
            cfl=_num(s.get("cfl", 0.5), "$.solver.cfl"),
            kappa=_num(s.get("kappa", 1.0), "$.solver.kappa"),
            max_dt=None if s.get("max_dt") is None else _num(s["max_dt"], "$.solver.max_dt"),
        )
    except ValueError as exc:
        raise ScenarioError(f"$.solver: {exc}") from None

    sim = obj.get("simulation", {}) or {}
    if not isinstance(sim, dict):
        raise ScenarioError("$.simulation: expected an object")
    if "z0" in sim:
        _vec(sim["z0"], "$.simulation.z0", grid.ndim)

    events = []
    for i, e in enumerate(obj.get("events", []) or []):
        p = f"$.events[{i}]"
        t = _num(_req(e, "time", p), f"{p}.time")
        removed = _req(e, "removed", p)
        if not isinstance(removed, list) or not all(isinstance(a, str) for a in removed):
            raise ScenarioError(f"{p}.removed: expected a list of atom names")
        for a in removed:
            if a not in lab:
                raise ScenarioError(f"{p}.removed: unknown atom {a!r}")
        events.append(PruneEvent(t, frozenset(removed)))

    return Scenario(str(obj.get("name", "scenario")), model, grid, horizon, lab, f, opts,
                    direction, sim, events, obj)


def packaged_scenarios() -> list[str]:
    root = resources.files("tltreach") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(ref: str) -> Path:
    """A path, or the name of a scenario shipped with the package."""
    p = Path(ref)
    if p.exists():
        return p
    packaged = resources.files("tltreach") / "scenarios" / f"{ref}.json"
    if packaged.is_file():
        return Path(str(packaged))
    raise ScenarioError(f"$: no scenario file {ref!r} (packaged: {', '.join(packaged_scenarios())})")


def load_scenario(ref: str | Path) -> Scenario:
    path = resolve_scenario(str(ref))
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"$: {path} is not valid JSON ({exc})") from None
    return parse_scenario(obj)


# ---------------------------------------------------------------------------
# artifacts

def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ScenarioError(f"${THREADS_ENV}: expected an integer, got {raw!r}") from None


def build(sc: Scenario, out: str | Path) -> dict:
    """Construct the tree and write the artifact directory; returns the report."""
    out = Path(out)
    (out / "fields").mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    t = tltmod.construct(sc.formula, sc.labeling, sc.model, sc.grid, sc.options,
                         direction=sc.direction, workers=_workers())
    elapsed = time.perf_counter() - t0
    for old in (out / "fields").iterdir():
        old.unlink()
    names = {}
    for n in t.nodes():
        names[n.id] = f"fields/node{n.id:03d}.bin"
        save_field(n.field, out / names[n.id])
    tree = tltmod.to_json(t, lambda n: names[n.id])
    (out / "tree.json").write_text(json.dumps(tree, indent=1))
    (out / "scenario.json").write_text(json.dumps(sc.raw, indent=1))
    verdict = ctrl_exists(t.root)
    report = {
        "scenario": sc.name,
        "formula": fm.to_string(t.formula),
        "construction_seconds": elapsed,
        "solves": [
            {"id": n.id, "formula": n.formula_text, "direction": str(n.direction),
             "seconds": n.solve_seconds}
            for n in t.nodes() if n.timed
        ],
        "nodes": dict(zip(("set", "op"), tltmod.count_nodes(t))),
        "dt": t.dt,
        "root_nonempty": tltmod.root_nonempty(t),
        "verdict": str(verdict),
        "gate": gate(verdict),
    }
    (out / "report.json").write_text(json.dumps(report, indent=1))
    return report


def load_artifact(path: str | Path) -> tuple[Scenario, tltmod.Tlt]:
    path = Path(path)
    try:
        sc = parse_scenario(json.loads((path / "scenario.json").read_text()))
        tree = json.loads((path / "tree.json").read_text())
        t = tltmod.from_json(tree, lambda name: load_field(path / name), sc.model)
        tltmod.check_structure(t)
    except FileNotFoundError as exc:
        raise ArtifactError(f"{path}: incomplete artifact ({exc.filename} missing)") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: corrupt artifact ({exc})") from None
    if t.grid != sc.grid:
        raise ArtifactError(f"{path}: tree grid differs from the scenario grid")
    return sc, t


def check_report(t: tltmod.Tlt) -> dict:
    verdict = ctrl_exists(t.root)
    return {
        "nonEmpty": tltmod.root_nonempty(t),
        "verdict": str(verdict),
        "gate": gate(verdict),
        "negationsAtomicOnly": fm.negations_atomic_only(t.formula),
        "nodes": annotate(t.root),
    }


def simulate(sc: Scenario, t: tltmod.Tlt, out: str | Path, seed: int = 0,
             z0=None) -> tuple[dict, int]:
    """Closed-loop run with the scenario's simulation block; returns (summary, exit code)."""
    out = Path(out)
    sim = sc.simulation
    z0 = np.asarray(_vec(sim["z0"], "$.simulation.z0") if z0 is None else z0, dtype=float)
    rng = np.random.default_rng(seed)
    policy = make_policy(sim.get("policy"), sc.model, rng)
    lattice = int(sim.get("lattice", 21))
    selector = None
    if sim.get("selector", "nearest") == "random":
        selector = lambda cs, u: sample_random_control(cs, rng, lattice)  # noqa: E731
    slack = float(sim.get("slack_cells", 0.25)) * t.grid.max_spacing
    margin = float(sim.get("monitor_margin_cells", 1.0)) * t.grid.max_spacing
    dt = sim.get("dt")
    T = sim.get("T")
    code = EXIT_OK
    try:
        traj = run_closed_loop(sc.model, t, z0, policy, dt=dt, T=T, selector=selector,
                               events=sc.events, slack=slack, lattice=lattice)
        error = None
    except RunAborted as exc:
        traj, error, code = exc.trajectory, str(exc), EXIT_INFEASIBLE
    traj.to_csv(out / "trajectory.csv")
    verdict = monitor(traj, sc.formula, sc.labeling, margin=margin)
    verdict_json(verdict, out / "verdict.json")
    if code == EXIT_OK and not verdict.satisfied:
        code = EXIT_MONITOR
    summary = {
        "satisfied": verdict.satisfied,
        "aborted": error,
        "steps": len(traj.controls),
        "events": traj.events,
        "final_state": traj.states[-1].tolist(),
    }
    (out / "simulation.json").write_text(json.dumps(summary, indent=1))
    return summary, code


def export(sc: Scenario, t: tltmod.Tlt, out: str | Path) -> dict:
    """Plot-ready CSV: every node's final set projected onto the first two axes."""
    out = Path(out) / "export"
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    keep = tuple(range(min(2, t.grid.ndim)))
    manifest = {"axes": list(keep), "nodes": []}
    for n in t.nodes():
        proj = project_min(n.final, keep)
        name = f"node{n.id:03d}_final.csv"
        export_csv(proj, out / name)
        manifest["nodes"].append({"id": n.id, "formula": n.formula_text, "threshold": n.threshold,
                                  "direction": str(n.direction), "csv": name})
    if t.root.timed:
        field_ = t.root.field
        for k in sorted({0, field_.n_steps // 2, field_.n_steps}):
            name = f"root_slice{k:05d}.csv"
            export_csv(project_min(field_.slice(k), keep), out / name)
            manifest.setdefault("root_slices", []).append(
                {"index": k, "time": float(field_.times[k]), "csv": name})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


# ---------------------------------------------------------------------------
# entry point

def _artifact_dir(args) -> Path:
    d = args.artifact or args.out
    if d is None:
        raise CliExit(EXIT_VALIDATION, "an artifact directory is required (positional or --out)")
    return Path(d)


def _print(obj) -> None:
    print(json.dumps(obj, indent=1))


def _cmd_build(args) -> int:
    if args.scenario is None or args.out is None:
        raise CliExit(EXIT_VALIDATION, "build needs --scenario and --out")
    sc = load_scenario(args.scenario)
    report = build(sc, args.out)
    _print(report)
    return EXIT_OK


def _cmd_check(args) -> int:
    _, t = load_artifact(_artifact_dir(args))
    rep = check_report(t)
    _print(rep)
    return EXIT_OK if rep["gate"] else EXIT_GATE


def _cmd_ctrl(args) -> int:
    sc, t = load_artifact(_artifact_dir(args))
    if args.state is None:
        raise CliExit(EXIT_VALIDATION, "ctrl needs --state")
    try:
        z = [float(v) for v in args.state.split(",")]
    except ValueError:
        raise CliExit(EXIT_VALIDATION, f"--state: expected comma-separated numbers, got {args.state!r}")
    if len(z) != t.grid.ndim:
        raise CliExit(EXIT_VALIDATION, f"--state: expected {t.grid.ndim} values")
    cs = least_restrictive_ctrl(sc.model.wrap(z), args.time, t)
    _print(cs.to_json())
    return EXIT_OK


def _cmd_simulate(args) -> int:
    d = _artifact_dir(args)
    sc, t = load_artifact(d)
    if "z0" not in sc.simulation and args.state is None:
        raise CliExit(EXIT_VALIDATION, "$.simulation.z0: missing (or pass --state)")
    z0 = None if args.state is None else [float(v) for v in args.state.split(",")]
    summary, code = simulate(sc, t, d, seed=args.seed, z0=z0)
    _print(summary)
    return code


def _cmd_export(args) -> int:
    sc, t = load_artifact(_artifact_dir(args))
    _print(export(sc, t, _artifact_dir(args)))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tltreach", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "build": "construct the tree for a scenario and write an artifact directory",
        "check": "existence verdict and per-node directions of a built artifact",
        "ctrl": "least-restrictive control set at --state and --time",
        "simulate": "closed-loop run of the scenario's simulation block",
        "export": "plot-ready CSV projections of the stored sets",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("artifact", nargs="?", help="artifact directory (same as --out)")
        s.add_argument("--scenario", help="scenario JSON path or packaged scenario name")
        s.add_argument("--out", help="artifact directory")
        s.add_argument("--state", help="comma-separated state vector")
        s.add_argument("--time", type=float, default=0.0, help="forward time in [0, T]")
        s.add_argument("--seed", type=int, default=0, help="seed for random policies and selectors")
    return p


_COMMANDS = {"build": _cmd_build, "check": _cmd_check, "ctrl": _cmd_ctrl,
             "simulate": _cmd_simulate, "export": _cmd_export}


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except CliExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ScenarioError, ArtifactError, tltmod.TltError, OutOfGridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SynthesisRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (InfeasibleQuery, SynthesisError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

"""Closed-loop deployment and a sampled finite-trace LTL monitor.

The monitor only uses the formula and the labeling, never the tree, so it
serves as the independent judge of closed-loop runs.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import formula as fm
from .ctrlsynth import (ControlSet, InfeasibleQuery, advance_progress, check_synthesizable,
                        in_root_set, least_restrictive_ctrl, sample_control)
from .dynamics import ControlAffineModel, step
from .geometry import Labeling, eval_surface
from .tlt import Tlt, prune

#: membership slack of closed-loop runs, in grid cells
DEFAULT_SLACK_CELLS = 0.25

Policy = Callable[[float, np.ndarray], np.ndarray]
Selector = Callable[[ControlSet, np.ndarray], np.ndarray]


class InitialStateError(InfeasibleQuery):
    """The initial state is outside the root set."""


class RunAborted(InfeasibleQuery):
    """A query became infeasible mid-run; ``trajectory`` holds the run so far."""

    def __init__(self, message: str, trajectory: "Trajectory"):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    nominal: np.ndarray | None = None
    events: list[dict] = field(default_factory=list)

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        n_x = self.states.shape[1]
        n_u = self.controls.shape[1] if self.controls.ndim == 2 else 0
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i}" for i in range(n_x)] + [f"u{j}" for j in range(n_u)])
            for k, t in enumerate(self.times):
                u = self.controls[k] if k < len(self.controls) else [float("nan")] * n_u
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.states[k]]
                           + [repr(float(v)) for v in u])
        return path


@dataclass
class MonitorVerdict:
    satisfied: bool
    #: first sample time at which each subformula holds (None if never)
    first_times: dict[str, float | None] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"satisfied": self.satisfied, "first_times": self.first_times}


def _eval(f: fm.Formula, lab: Labeling, states: np.ndarray, margin: float,
          cache: dict) -> np.ndarray:
    key = id(f)
    if key in cache:
        return cache[key][1]
    n = len(states)
    if isinstance(f, fm.TrueF):
        out = np.ones(n, dtype=bool)
    elif isinstance(f, fm.FalseF):
        out = np.zeros(n, dtype=bool)
    elif isinstance(f, fm.Atom):
        s = lab[f.name]
        out = np.array([eval_surface(s, z) <= margin for z in states])
    elif isinstance(f, fm.Not):
        out = ~_eval(f.arg, lab, states, margin, cache)
    elif isinstance(f, fm.And):
        out = _eval(f.lhs, lab, states, margin, cache) & _eval(f.rhs, lab, states, margin, cache)
    elif isinstance(f, fm.Or):
        out = _eval(f.lhs, lab, states, margin, cache) | _eval(f.rhs, lab, states, margin, cache)
    else:
        if isinstance(f, fm.Until):
            a = _eval(f.lhs, lab, states, margin, cache)
            b = _eval(f.rhs, lab, states, margin, cache)
        elif isinstance(f, fm.Eventually):
            b = _eval(f.arg, lab, states, margin, cache)
            a = np.ones(n, dtype=bool)
        else:
            a = _eval(f.arg, lab, states, margin, cache)
        out = np.empty(n, dtype=bool)
        nxt = isinstance(f, fm.Always)
        for i in range(n - 1, -1, -1):
            if isinstance(f, fm.Always):
                nxt = a[i] and nxt
            else:
                # exists j >= i with b[j] and a on [i, j)
                nxt = b[i] or (a[i] and (nxt if i < n - 1 else False))
            out[i] = nxt
    cache[key] = (f, out)
    return out


def monitor(traj: Trajectory | np.ndarray, f: fm.Formula | str, lab: Labeling,
            margin: float = 0.0) -> MonitorVerdict:
    """Evaluate ``f`` at time 0 on the sampled trace, with the last sample as horizon.

    An atom holds at a sample when its surface value is ``<= margin``.
    """
    if isinstance(f, str):
        f = fm.parse(f)
    if isinstance(traj, Trajectory):
        states, times = traj.states, traj.times
    else:
        states = np.asarray(traj, dtype=float)
        times = np.arange(len(states), dtype=float)
    cache: dict = {}
    sat = bool(_eval(f, lab, states, margin, cache)[0])
    first = {}
    for g, arr in cache.values():
        hits = np.flatnonzero(arr)
        first[fm.to_string(g)] = float(times[hits[0]]) if hits.size else None
    return MonitorVerdict(sat, first)


@dataclass(frozen=True)
class PruneEvent:
    time: float
    removed: frozenset[str]


def run_closed_loop(model: ControlAffineModel, tlt: Tlt, z0, policy: Policy,
                    dt: float | None = None, T: float | None = None, *,
                    selector: Selector | None = None, events: Sequence[PruneEvent] = (),
                    slack: float | None = None, lattice: int = 21) -> Trajectory:
    """Deploy the least-restrictive filter around ``policy``.

    At every step the control set is queried at ``(z, t)`` and the applied
    input is picked from it by ``selector`` (default: the feasible lattice
    point nearest the nominal input). Prune events remove tree branches at
    their time without re-solving anything. ``slack`` (default a quarter
    of the largest grid spacing) absorbs the first-order drift of the tube
    value between steps; it stays inside the margin of under-approximated
    tubes.
    """
    if slack is None:
        slack = DEFAULT_SLACK_CELLS * tlt.grid.max_spacing
    dt = tlt.dt if dt is None else float(dt)
    T = tlt.horizon if T is None else float(T)
    if dt is None or dt <= 0:
        raise ValueError("a positive dt is required")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-6 * max(1.0, T):
        raise ValueError(f"dt {dt} does not divide the horizon {T}")
    check_synthesizable(tlt)
    z = model.wrap(np.asarray(z0, dtype=float))
    if not in_root_set(tlt, z, 0.0):
        raise InitialStateError(f"initial state {z.tolist()} is outside the root set")
    if selector is None:
        selector = lambda cs, u_nom: sample_control(cs, u_nom, lattice)  # noqa: E731

    pending = sorted(events, key=lambda e: e.time)
    times = dt * np.arange(n + 1)
    states = [z]
    controls, nominal, log = [], [], []
    settled: frozenset[int] = frozenset()

    def partial():
        return Trajectory(times[:len(states)], np.array(states), np.array(controls).reshape(len(controls), -1),
                          np.array(nominal).reshape(len(nominal), -1), log)

    for k in range(n):
        t = float(times[k])
        while pending and pending[0].time <= t + 1e-12:
            ev = pending.pop(0)
            try:
                tlt = prune(tlt, ev.removed)
                check_synthesizable(tlt)
            except Exception as exc:
                log.append({"time": t, "removed": sorted(ev.removed), "error": str(exc)})
                raise RunAborted(f"event at t={t:g}: {exc}", partial()) from exc
            log.append({"time": t, "removed": sorted(ev.removed), "formula": fm.to_string(tlt.formula)})
        if tlt.root.id not in settled:
            settled = advance_progress(tlt, z, t, settled, slack)
        try:
            if tlt.root.id in settled:
                # the formula is satisfied on this run; the filter is inactive
                cs = ControlSet.full(model)
            else:
                cs = least_restrictive_ctrl(z, t, tlt, settled, slack)
            u_nom = np.asarray(policy(t, z), dtype=float).reshape(-1)
            u = selector(cs, u_nom)
        except Exception as exc:
            raise RunAborted(f"step {k} (t={t:g}): {exc}", partial()) from exc
        controls.append(u)
        nominal.append(u_nom)
        z = step(model, z, u, dt)
        states.append(z)
    return partial()


# ---------------------------------------------------------------------------
# nominal policies

def zero_policy(model: ControlAffineModel) -> Policy:
    return lambda t, z: np.zeros(model.n_u)


def constant_policy(u) -> Policy:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return lambda t, z: u


def random_policy(model: ControlAffineModel, rng: np.random.Generator) -> Policy:
    return lambda t, z: rng.uniform(model.u_min, model.u_max)


def goto_policy(model: ControlAffineModel, target, gain: float = 2.0) -> Policy:
    """Steer the heading (state 2) toward planar point ``target``; zero other inputs."""
    target = np.asarray(target, dtype=float)

    def policy(t, z):
        bearing = np.arctan2(target[1] - z[1], target[0] - z[0])
        err = np.mod(bearing - z[2] + np.pi, 2 * np.pi) - np.pi
        u = np.zeros(model.n_u)
        u[0] = gain * err
        return model.clip(u)

    return policy


def make_policy(spec: dict | None, model: ControlAffineModel, rng: np.random.Generator) -> Policy:
    spec = spec or {"type": "zero"}
    kind = spec.get("type", "zero")
    if kind == "zero":
        return zero_policy(model)
    if kind == "constant":
        return constant_policy(spec["u"])
    if kind == "random":
        return random_policy(model, rng)
    if kind == "goto":
        return goto_policy(model, spec["target"], float(spec.get("gain", 2.0)))
    raise ValueError(f"unknown policy type {kind!r}")


def verdict_json(v: MonitorVerdict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(v.to_json(), indent=1))
    return path

"""Least-restrictive control sets read off the tubes of a temporal logic tree.

At a state ``z`` and forward time ``t`` every active until/always node
contributes one half-space ``a + b.u <= 0`` obtained from a first-order
expansion of its value function over one stored time step. Half-spaces are
combined up the tree: conjunctions intersect, disjunctions take the union
of the branches the state currently belongs to. Queries only interpolate
stored slices; no PDE is solved.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import formula as fm
from .ctrlexists import ctrl_exists, gate
from .dynamics import ControlAffineModel
from .grid import OutOfGridError, TimedValueField, central_gradient_at, interpolate_array
from .tlt import SetNode, Tlt


#: relative tolerance admitting near-optimal inputs when only those remain
BEST_EFFORT_TOL = 1e-3


class SynthesisError(RuntimeError):
    pass


class SynthesisRefused(SynthesisError):
    """The tree fails the existence gate or has non-atomic negations."""


class InfeasibleQuery(SynthesisError):
    """The queried state is outside the root set at the queried time."""


class NoFeasibleControl(SynthesisError):
    """No point of the control lattice lies in the set."""


@dataclass(frozen=True)
class HalfSpace:
    """``a + b @ u <= 0``."""

    a: float
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        if not (np.isfinite(self.a) and np.all(np.isfinite(self.b))):
            raise ValueError("half-space coefficients must be finite")

    def shifted(self, level: float) -> "HalfSpace":
        """The half-space ``a + b @ u <= level``."""
        return HalfSpace(self.a - level, self.b)


@dataclass
class ControlSet:
    """Union of convex cells, each the control box intersected with half-spaces."""

    u_min: np.ndarray
    u_max: np.ndarray
    cells: list[tuple[HalfSpace, ...]] = field(default_factory=list)

    @classmethod
    def full(cls, model: ControlAffineModel) -> "ControlSet":
        return cls(model.u_min, model.u_max, [()])

    @classmethod
    def empty(cls, model: ControlAffineModel) -> "ControlSet":
        return cls(model.u_min, model.u_max, [])

    def intersect(self, other: "ControlSet") -> "ControlSet":
        return ControlSet(self.u_min, self.u_max,
                          [c1 + c2 for c1 in self.cells for c2 in other.cells])

    def union(self, other: "ControlSet") -> "ControlSet":
        return ControlSet(self.u_min, self.u_max, self.cells + other.cells)

    def with_halfspace(self, h: HalfSpace) -> "ControlSet":
        return ControlSet(self.u_min, self.u_max, [c + (h,) for c in self.cells])

    def mask(self, us: np.ndarray) -> np.ndarray:
        """Membership of controls ``us`` of shape ``(m, n_u)``."""
        us = np.atleast_2d(us)
        in_box = np.all((us >= self.u_min - 1e-12) & (us <= self.u_max + 1e-12), axis=1)
        hit = np.zeros(len(us), dtype=bool)
        for cell in self.cells:
            ok = in_box.copy()
            for h in cell:
                ok &= h.a + us @ h.b <= 0.0
            hit |= ok
        return hit

    def to_json(self) -> dict:
        return {
            "u_min": self.u_min.tolist(),
            "u_max": self.u_max.tolist(),
            "cells": [{"a": [h.a for h in c], "b": [h.b.tolist() for h in c]} for c in self.cells],
        }


def contains_control(cs: ControlSet, u) -> bool:
    return bool(cs.mask(np.asarray(u, dtype=float).reshape(1, -1))[0])


@lru_cache(maxsize=16)
def _lattice(u_min: tuple, u_max: tuple, n: int) -> np.ndarray:
    axes = [np.linspace(a, b, n) if b > a else np.array([a]) for a, b in zip(u_min, u_max)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


def control_lattice(cs: ControlSet, n: int = 21) -> np.ndarray:
    return _lattice(tuple(cs.u_min), tuple(cs.u_max), n)


def sample_control(cs: ControlSet, u_nominal, n: int = 21) -> np.ndarray:
    """Feasible lattice control closest to ``u_nominal`` (first in lattice order on ties)."""
    lat = control_lattice(cs, n)
    ok = cs.mask(lat)
    if not ok.any():
        raise NoFeasibleControl(f"no feasible control on the {n}-point lattice")
    cand = lat[ok]
    d = np.sum((cand - np.asarray(u_nominal, dtype=float)) ** 2, axis=1)
    return cand[int(np.argmin(d))].copy()


def sample_random_control(cs: ControlSet, rng: np.random.Generator, n: int = 21) -> np.ndarray:
    """Uniformly random feasible lattice control."""
    lat = control_lattice(cs, n)
    ok = np.flatnonzero(cs.mask(lat))
    if ok.size == 0:
        raise NoFeasibleControl(f"no feasible control on the {n}-point lattice")
    return lat[rng.choice(ok)].copy()


def half_space_at(v: TimedValueField, model: ControlAffineModel, z, t: float,
                  dt: float | None = None) -> HalfSpace:
    """First-order half-space keeping ``v`` non-positive over one step from ``(z, t)``.

    ``a = V(z, s + dt) + grad V(z, s) . f(z) dt`` and ``b = g(z)^T grad V(z, s) dt``
    with ``s = -T + t``; the time derivative is taken through the next
    stored slice.
    """
    if dt is None:
        dt = v.dt
    elif not np.isclose(dt, v.dt, rtol=1e-6, atol=1e-12):
        raise ValueError(f"dt {dt} differs from the stored slice spacing {v.dt}")
    k = v.index_at(t)
    if k < 1:
        raise ValueError(f"time {t} leaves no step before the horizon {v.horizon}")
    z = np.asarray(z, dtype=float)
    if not v.grid.contains(z):
        raise OutOfGridError(f"state {z.tolist()} outside the grid")
    v_next = float(interpolate_array(v.values[k - 1], v.grid, z)[0])
    grad = central_gradient_at(v.values[k], v.grid, z)
    a = v_next + grad @ model.drift(z) * dt
    b = grad @ model.input_map(z) * dt
    return HalfSpace(a, b)


def _has_temporal(n: SetNode) -> bool:
    return any(m.timed for m in _walk(n))


def _walk(n: SetNode):
    yield n
    for c in n.children():
        yield from _walk(c)


class _Query:
    def __init__(self, tlt: Tlt, z, t: float, settled: frozenset[int], slack: float):
        self.tlt = tlt
        self.model = tlt.model
        self.z = np.asarray(z, dtype=float)
        self.t = float(t)
        self.settled = settled
        self.slack = slack
        self._values: dict[int, float] = {}

    def value(self, n: SetNode) -> float:
        if n.id not in self._values:
            if n.timed:
                arr = n.field.values[n.field.index_at(self.t)]
            else:
                arr = n.field.values
            self._values[n.id] = float(interpolate_array(arr, self.tlt.grid, self.z)[0])
        return self._values[n.id]

    def member(self, n: SetNode) -> bool:
        if n.id in self.settled:
            return True
        kind = None if n.child is None else n.child.kind
        if kind == "and":
            return all(self.member(c) for c in n.child.children)
        if kind == "or":
            return any(self.member(c) for c in n.child.children)
        # slack only loosens tubes; reaching a static target is never relaxed
        return self.value(n) <= n.threshold + (self.slack if n.timed else 0.0)

    def tube_cell(self, n: SetNode) -> ControlSet:
        h = half_space_at(n.field, self.model, self.z, self.t)
        # drifted slightly above the level: ask for no further increase instead
        level = max(n.threshold, self.value(n))
        # the linearisation misses the scheme's dissipation, so right on the
        # boundary the half-space can miss the box; keep the best inputs then
        best = h.a + float(np.sum(np.minimum(h.b * self.model.u_min, h.b * self.model.u_max)))
        level = max(level, best + BEST_EFFORT_TOL * (abs(h.a) + float(np.abs(h.b).sum()) + 1e-12))
        return ControlSet.full(self.model).with_halfspace(h.shifted(level))

    def ctrl(self, n: SetNode) -> ControlSet | None:
        """controlTree + compressTree for the subtree at ``n``; None drops the branch."""
        if n.id in self.settled:
            return ControlSet.full(self.model)
        kind = None if n.child is None else n.child.kind
        if kind is None or kind == "not":
            return ControlSet.full(self.model) if self.member(n) else None
        kids = n.child.children
        if kind == "and":
            parts = [self.ctrl(c) for c in kids]
            if any(p is None for p in parts):
                return None
            return parts[0].intersect(parts[1])
        if kind == "or":
            parts = [p for p in (self.ctrl(c) for c in kids if self.member(c)) if p is not None]
            if not parts:
                return None
            out = parts[0]
            for p in parts[1:]:
                out = out.union(p)
            return out
        if kind == "until":
            constraint, target = kids
            if self.member(target):
                return self.ctrl(target)
            if not self.member(n):
                return None
            cs = self.tube_cell(n)
            if _has_temporal(constraint):
                c = self.ctrl(constraint)
                if c is None:
                    return None
                cs = cs.intersect(c)
            return cs
        # always
        if not self.member(n):
            return None
        cs = self.tube_cell(n)
        (kid,) = kids
        if _has_temporal(kid):
            c = self.ctrl(kid)
            if c is None:
                return None
            cs = cs.intersect(c)
        return cs


def check_synthesizable(tlt: Tlt) -> None:
    verdict = ctrl_exists(tlt.root)
    if not gate(verdict):
        raise SynthesisRefused(f"existence check returned {verdict}; synthesis refused")
    if not fm.negations_atomic_only(tlt.formula):
        raise SynthesisRefused("control synthesis needs negations on atoms only")
    if tlt.model is None:
        raise SynthesisRefused("tree carries no dynamics model")


def least_restrictive_ctrl(z, t: float, tlt: Tlt, settled: frozenset[int] = frozenset(),
                           slack: float = 0.0) -> ControlSet:
    """Least-restrictive control set at state ``z`` and forward time ``t``.

    ``settled`` holds ids of top-level nodes already satisfied along the
    current run (see `advance_progress`); they no longer constrain the
    input. ``slack`` loosens membership tests by that many value units.
    """
    check_synthesizable(tlt)
    if not 0.0 <= t <= tlt.horizon + 1e-9:
        raise ValueError(f"time {t} outside [0, {tlt.horizon}]")
    if not tlt.grid.contains(z):
        raise OutOfGridError(f"state {np.asarray(z).tolist()} outside the grid")
    q = _Query(tlt, z, t, frozenset(settled), slack)
    if not q.member(tlt.root):
        raise InfeasibleQuery(f"state {np.asarray(z).tolist()} is outside the root set at t={t:g}")
    cs = q.ctrl(tlt.root)
    if cs is None:
        raise InfeasibleQuery(f"no branch of the tree is active at t={t:g}")
    return cs


def in_root_set(tlt: Tlt, z, t: float = 0.0, settled: frozenset[int] = frozenset(),
                slack: float = 0.0) -> bool:
    if not tlt.grid.contains(z):
        return False
    return _Query(tlt, z, t, frozenset(settled), slack).member(tlt.root)


def advance_progress(tlt: Tlt, z, t: float, settled: frozenset[int] = frozenset(),
                     slack: float = 0.0) -> frozenset[int]:
    """Record top-level nodes that the run has satisfied by reaching ``(z, t)``.

    Walks the boolean layer under the root. Static nodes settle at ``t = 0``
    if they hold there; an until node settles once its (static) target is
    reached, its constraint having been enforced by the tube until then.
    """
    q = _Query(tlt, z, t, frozenset(settled), slack)
    out = set(settled)

    def visit(n: SetNode) -> bool:
        if n.id in out:
            return True
        kind = None if n.child is None else n.child.kind
        done = False
        if kind in ("and", "or"):
            res = [visit(c) for c in n.child.children]
            done = all(res) if kind == "and" else any(res)
        elif kind == "until":
            target = n.child.children[1]
            done = not _has_temporal(target) and q.member(target)
        elif kind is None or kind == "not":
            done = t == 0.0 and q.member(n)
        if done:
            out.add(n.id)
        return done

    visit(tlt.root)
    return frozenset(out)

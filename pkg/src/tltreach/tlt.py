"""Temporal logic trees built from reachability computations.

A tree alternates set nodes and operator nodes. Every set node stores an
implicit field whose ``threshold`` sub-level set is the node's state set:
atoms and boolean combinations are static fields, until and always nodes
keep the whole backward-time tube.

Temporal nodes pick their approximation direction top-down from what their
position needs: the root needs an under-approximation, negation flips the
need, and operands of a conjunction are over-approximated (a conjunction can
only ever yield an over-approximation, so under-approximated operands would
make it invalid).
"""
from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterator

import numpy as np

from . import formula as fm
from .approx import ApproxDirection
from .ctrlexists import and_dir, or_dir
from .dynamics import ControlAffineModel
from .geometry import All, Empty, Labeling, discretize
from .grid import Grid, TimedValueField, ValueField
from .hjsolver import SolveOptions, rci, solve_reach, threshold

E = ApproxDirection.EXACT
O = ApproxDirection.OVER
U = ApproxDirection.UNDER

OP_KINDS = ("not", "and", "or", "until", "always")


class TltError(ValueError):
    pass


class PruneError(TltError):
    """Pruning would leave a disjunction without any branch."""


@dataclass(eq=False)
class OpNode:
    kind: str
    children: list["SetNode"]
    direction: ApproxDirection | None = None


@dataclass(eq=False)
class SetNode:
    formula: fm.Formula
    field: ValueField | TimedValueField
    direction: ApproxDirection
    threshold: float = 0.0
    child: OpNode | None = None
    id: int = -1
    solve_seconds: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.child is None

    @property
    def timed(self) -> bool:
        return isinstance(self.field, TimedValueField)

    @property
    def final(self) -> ValueField:
        """The node's field at ``t' = -T`` (the field itself when static)."""
        return self.field.final if self.timed else self.field

    @property
    def formula_text(self) -> str:
        return fm.to_string(self.formula)

    def normalized(self) -> np.ndarray:
        """Final-slice values shifted so that membership is ``<= 0``."""
        return self.final.values - self.threshold

    def children(self) -> list["SetNode"]:
        return [] if self.child is None else list(self.child.children)


@dataclass
class Tlt:
    root: SetNode
    formula: fm.Formula
    grid: Grid
    horizon: float
    model: ControlAffineModel | None = None
    kappa: float = 1.0

    def nodes(self) -> Iterator[SetNode]:
        stack = [self.root]
        while stack:
            n = stack.pop()
            yield n
            stack.extend(reversed(n.children()))

    def node(self, node_id: int) -> SetNode:
        for n in self.nodes():
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    @property
    def dt(self) -> float | None:
        """Slice spacing shared by the tree's tubes (None without tubes)."""
        for n in self.nodes():
            if n.timed:
                return n.field.dt
        return None


def _combine(kind: str, kids: list[SetNode]) -> tuple[np.ndarray, ApproxDirection]:
    if kind == "not":
        (k,) = kids
        return -k.normalized(), k.direction.negate()
    a, b = kids
    if kind == "and":
        values = np.maximum(a.normalized(), b.normalized())
        d = E if a.direction is E and b.direction is E else and_dir(a.direction, b.direction)
    else:
        values = np.minimum(a.normalized(), b.normalized())
        d = or_dir(a.direction, b.direction)
    return values, d


class _Builder:
    def __init__(self, lab: Labeling, model: ControlAffineModel, grid: Grid, opts: SolveOptions,
                 direction: ApproxDirection | None, workers: int):
        self.lab = lab
        self.model = model
        self.grid = grid
        self.opts = opts
        self.override = direction
        self.workers = workers

    def pair(self, a: fm.Formula, b: fm.Formula, need_a, need_b) -> tuple[SetNode, SetNode]:
        if self.workers > 1:
            with ThreadPoolExecutor(2) as ex:
                fa = ex.submit(self.build, a, need_a)
                fb = ex.submit(self.build, b, need_b)
                return fa.result(), fb.result()
        return self.build(a, need_a), self.build(b, need_b)

    def leaf(self, f: fm.Formula, s) -> SetNode:
        return SetNode(f, discretize(s, self.grid), E)

    def build(self, f: fm.Formula, need: ApproxDirection) -> SetNode:
        if isinstance(f, fm.TrueF):
            return self.leaf(f, All())
        if isinstance(f, fm.FalseF):
            return self.leaf(f, Empty())
        if isinstance(f, fm.Atom):
            if f.name not in self.lab:
                raise TltError(f"unknown atom {f.name!r}")
            return self.leaf(f, self.lab[f.name])
        if isinstance(f, fm.Not):
            kid = self.build(f.arg, need.negate())
            return self.combo(f, "not", [kid])
        if isinstance(f, fm.And):
            return self.combo(f, "and", list(self.pair(f.lhs, f.rhs, O, O)))
        if isinstance(f, fm.Or):
            return self.combo(f, "or", list(self.pair(f.lhs, f.rhs, need, need)))
        if isinstance(f, (fm.Until, fm.Eventually)):
            lhs = fm.TRUE if isinstance(f, fm.Eventually) else f.lhs
            rhs = f.arg if isinstance(f, fm.Eventually) else f.rhs
            c1, c2 = self.pair(lhs, rhs, need, need)
            d = self.override or need
            constraint = None if isinstance(lhs, fm.TrueF) else ValueField(self.grid, c1.normalized())
            t0 = time.perf_counter()
            tube = solve_reach(ValueField(self.grid, c2.normalized()), constraint, self.model,
                               self.opts.with_direction(d))
            node = SetNode(f, tube, d, threshold(d, self.opts.kappa, self.grid),
                           OpNode("until", [c1, c2], d))
            node.solve_seconds = time.perf_counter() - t0
            return node
        if isinstance(f, fm.Always):
            kid = self.build(f.arg, need)
            d = self.override or need
            t0 = time.perf_counter()
            tube = rci(ValueField(self.grid, kid.normalized()), self.model, self.opts.with_direction(d))
            node = SetNode(f, tube, d, threshold(d, self.opts.kappa, self.grid),
                           OpNode("always", [kid], d))
            node.solve_seconds = time.perf_counter() - t0
            return node
        raise TltError(f"unsupported formula node {type(f).__name__}")

    def combo(self, f: fm.Formula, kind: str, kids: list[SetNode]) -> SetNode:
        values, d = _combine(kind, kids)
        return SetNode(f, ValueField(self.grid, values), d, 0.0, OpNode(kind, kids))


def _assign_ids(root: SetNode, start: int = 0) -> int:
    counter = itertools.count(start)
    stack = [root]
    while stack:
        n = stack.pop()
        if n.id < 0:
            n.id = next(counter)
        stack.extend(reversed(n.children()))
    return next(counter)


def construct(f: fm.Formula | str, lab: Labeling, model: ControlAffineModel, grid: Grid,
              opts: SolveOptions, direction: ApproxDirection | None = None,
              workers: int = 1) -> Tlt:
    """Build the temporal logic tree of ``f``.

    ``direction`` forces one approximation direction on every temporal node
    instead of the position-derived one.
    """
    if isinstance(f, str):
        f = fm.parse(f)
    if model.n_x != grid.ndim:
        raise TltError(f"model has {model.n_x} states but the grid has {grid.ndim} dimensions")
    if lab.ndim != grid.ndim:
        raise TltError(f"labeling is {lab.ndim}-dimensional, grid is {grid.ndim}-dimensional")
    missing = sorted(fm.atoms(f) - set(lab.sets))
    if missing:
        raise TltError(f"unknown atom {missing[0]!r}")
    root = _Builder(lab, model, grid, opts, direction, workers).build(f, U)
    _assign_ids(root)
    return Tlt(root, f, grid, opts.horizon, model, opts.kappa)


def root_nonempty(t: Tlt) -> bool:
    """Whether the root set contains at least one grid point."""
    return bool(np.any(t.root.final.values <= t.root.threshold))


def negation_parity(t: Tlt) -> dict[int, int]:
    """Number of negation ancestors of every set node, keyed by node id."""
    out = {}
    stack = [(t.root, 0)]
    while stack:
        n, k = stack.pop()
        out[n.id] = k
        bump = 1 if n.child is not None and n.child.kind == "not" else 0
        stack.extend((c, k + bump) for c in n.children())
    return out


def prune(t: Tlt, removed: set[str] | frozenset[str]) -> Tlt:
    """Drop disjunction branches that mention any atom in ``removed``.

    Only the boolean layer between the root and the first temporal nodes is
    touched; surviving subtrees are reused as is and their ancestors are
    recombined without solving anything.
    """
    removed = set(removed)
    if not removed:
        return t
    next_id = [max(n.id for n in t.nodes()) + 1]

    def visit(n: SetNode) -> SetNode:
        if n.child is None or n.child.kind not in ("and", "or", "not"):
            return n
        kids = n.child.children
        if n.child.kind == "or":
            kids = [k for k in kids if not (fm.atoms(k.formula) & removed)]
            if not kids:
                raise PruneError(
                    f"pruning {sorted(removed)} removes every branch of {n.formula_text}; task infeasible"
                )
        new = [visit(k) for k in kids]
        if len(new) == 1 and n.child.kind == "or":
            return new[0]
        if all(a is b for a, b in zip(new, n.child.children)) and len(new) == len(n.child.children):
            return n
        values, d = _combine(n.child.kind, new)
        if n.child.kind == "not":
            f = fm.Not(new[0].formula)
        else:
            f = {"and": fm.And, "or": fm.Or}[n.child.kind](new[0].formula, new[1].formula)
        out = SetNode(f, ValueField(t.grid, values), d, 0.0, OpNode(n.child.kind, new), next_id[0])
        next_id[0] += 1
        return out

    root = visit(t.root)
    return replace(t, root=root, formula=root.formula)


def count_nodes(t: Tlt) -> tuple[int, int]:
    """(set nodes, operator nodes)."""
    sets = ops = 0
    for n in t.nodes():
        sets += 1
        ops += n.child is not None
    return sets, ops


def check_structure(t: Tlt) -> None:
    """Raise `TltError` unless the tree alternates set and operator nodes correctly."""
    arity = {"not": 1, "always": 1, "and": 2, "or": 2, "until": 2}
    for n in t.nodes():
        if not isinstance(n, SetNode):
            raise TltError("non-set node in set position")
        if n.child is None:
            continue
        op = n.child
        if not isinstance(op, OpNode) or op.kind not in arity:
            raise TltError(f"node {n.id}: bad operator child")
        if len(op.children) != arity[op.kind]:
            raise TltError(f"node {n.id}: operator {op.kind} has {len(op.children)} children")
        if (op.direction is None) != (op.kind not in ("until", "always")):
            raise TltError(f"node {n.id}: operator direction only on until/always")
        if not all(isinstance(c, SetNode) for c in op.children):
            raise TltError(f"node {n.id}: operator children must be set nodes")


# ---------------------------------------------------------------------------
# serialization

def to_json(t: Tlt, field_name: Callable[[SetNode], str]) -> dict:
    """Tree description; ``field_name`` maps a node to its stored field file."""

    def enc(n: SetNode) -> dict:
        out = {
            "kind": "set",
            "id": n.id,
            "formula": n.formula_text,
            "direction": str(n.direction),
            "threshold": n.threshold,
            "timed": n.timed,
            "field": field_name(n),
            "solve_seconds": n.solve_seconds,
        }
        if n.child is not None:
            out["child"] = {
                "kind": "op",
                "op": n.child.kind,
                "direction": None if n.child.direction is None else str(n.child.direction),
                "children": [enc(c) for c in n.child.children],
            }
        return out

    return {
        "formula": fm.to_string(t.formula),
        "horizon": t.horizon,
        "kappa": t.kappa,
        "grid": t.grid.to_json(),
        "model": None if t.model is None else t.model.to_json(),
        "root": enc(t.root),
    }


def from_json(obj: dict, load: Callable[[str], ValueField | TimedValueField],
              model: ControlAffineModel | None = None) -> Tlt:
    def dec(d: dict) -> SetNode:
        if d.get("kind") != "set":
            raise TltError(f"expected a set node, found {d.get('kind')!r}")
        child = None
        if "child" in d:
            c = d["child"]
            if c["op"] not in OP_KINDS:
                raise TltError(f"unknown operator {c['op']!r}")
            od = None if c["direction"] is None else ApproxDirection.parse(c["direction"])
            child = OpNode(c["op"], [dec(k) for k in c["children"]], od)
        return SetNode(fm.parse(d["formula"]), load(d["field"]), ApproxDirection.parse(d["direction"]),
                       float(d["threshold"]), child, int(d["id"]), float(d.get("solve_seconds", 0.0)))

    root = dec(obj["root"])
    grid = Grid.from_json(obj["grid"])
    return Tlt(root, fm.parse(obj["formula"]), grid, float(obj["horizon"]), model,
               float(obj.get("kappa", 1.0)))

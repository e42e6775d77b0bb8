"""Existence check for satisfying control policies, from approximation directions.

Directions are folded bottom-up over a temporal logic tree. Only an
under-approximating (or exact) root guarantees that some policy satisfies
the tree; intersections are where over-approximation ("leaking corners")
creeps in.
"""
from __future__ import annotations

from .approx import ApproxDirection

E = ApproxDirection.EXACT
O = ApproxDirection.OVER
U = ApproxDirection.UNDER
I = ApproxDirection.INVALID  # noqa: E741


class MalformedTreeError(ValueError):
    pass


def negate_dir(a: ApproxDirection) -> ApproxDirection:
    return a.negate()


def and_dir(a1: ApproxDirection, a2: ApproxDirection) -> ApproxDirection:
    if I in (a1, a2) or U in (a1, a2):
        return I
    return O


def or_dir(a1: ApproxDirection, a2: ApproxDirection) -> ApproxDirection:
    if I in (a1, a2):
        return I
    if a1 == a2:
        return a1
    if a1 is E:
        return a2
    if a2 is E:
        return a1
    return I


def temporal_dir(op_dir: ApproxDirection, child: ApproxDirection) -> ApproxDirection:
    # an exact operand is compatible with either reachability direction
    if child is I:
        return I
    if child is E:
        return op_dir
    return child if child == op_dir else I


_ARITY = {"not": 1, "always": 1, "and": 2, "or": 2, "until": 2}


def ctrl_exists(node) -> ApproxDirection:
    """Verdict for the subtree rooted at set node ``node``.

    Until nodes are matched on their target operand; the constraint operand
    only has to be valid.
    """
    op = node.child
    if op is None:
        return node.direction
    kids = op.children
    if op.kind not in _ARITY:
        raise MalformedTreeError(f"unknown operator {op.kind!r}")
    if len(kids) != _ARITY[op.kind]:
        raise MalformedTreeError(f"operator {op.kind!r} has {len(kids)} children")
    dirs = [ctrl_exists(k) for k in kids]
    if op.kind == "not":
        return negate_dir(dirs[0])
    if op.kind == "always":
        return temporal_dir(op.direction, dirs[0])
    if op.kind == "until":
        if dirs[0] is I:
            return I
        return temporal_dir(op.direction, dirs[1])
    if op.kind == "and":
        return and_dir(*dirs)
    return or_dir(*dirs)


def annotate(node) -> dict:
    """Per-node verdicts as nested JSON-ready dicts."""
    out = {
        "id": node.id,
        "formula": node.formula_text,
        "recorded": str(node.direction),
        "verdict": str(ctrl_exists(node)),
    }
    if node.child is not None:
        out["op"] = node.child.kind
        if node.child.direction is not None:
            out["op_direction"] = str(node.child.direction)
        out["children"] = [annotate(k) for k in node.child.children]
    return out


def gate(verdict: ApproxDirection) -> bool:
    """Whether synthesis may proceed: the root must be under-approximated or exact."""
    return verdict in (U, E)

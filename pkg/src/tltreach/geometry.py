"""Implicit-surface encodings of atomic propositions.

Every `SetExpr` evaluates to a signed, distance-like value that is ``<= 0``
exactly on its members. Values are exact signed distances only for a single
box or half-space; unions and intersections use min/max.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .grid import Grid, ValueField

#: Finite stand-ins for +/- infinity so fields stay exportable.
BIG = 1e9


class GeometryError(ValueError):
    pass


class SetExpr:
    """Base class for set expressions over a state space."""

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Surface values at ``points`` of shape ``(ndim, ...)``."""
        raise NotImplementedError

    def dims_used(self) -> int:
        """Smallest state dimension this expression can be evaluated in."""
        return 0

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Box(SetExpr):
    """Axis-aligned box; infinite bounds leave that axis unconstrained."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise GeometryError("box bounds differ in length")
        if any(a > b for a, b in zip(lo, hi)):
            raise GeometryError(f"box requires lo <= hi, got {lo} / {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def dims_used(self):
        return len(self.lo)

    def evaluate(self, points):
        out = np.full(points.shape[1:], -BIG)
        for i, (a, b) in enumerate(zip(self.lo, self.hi)):
            if np.isfinite(a):
                out = np.maximum(out, a - points[i])
            if np.isfinite(b):
                out = np.maximum(out, points[i] - b)
        return out

    def to_json(self):
        enc = lambda v: v if np.isfinite(v) else None  # noqa: E731
        return {"type": "box", "lo": [enc(v) for v in self.lo], "hi": [enc(v) for v in self.hi]}


@dataclass(frozen=True)
class HalfSpaceCoord(SetExpr):
    """``z[dim] <= threshold`` (``op='<='``) or ``z[dim] >= threshold``."""

    dim: int
    threshold: float
    op: str = "<="

    def __post_init__(self):
        if self.op not in ("<=", ">="):
            raise GeometryError(f"half-space op must be '<=' or '>=', got {self.op!r}")
        if self.dim < 0:
            raise GeometryError("negative dimension index")

    def dims_used(self):
        return self.dim + 1

    def evaluate(self, points):
        d = points[self.dim] - self.threshold
        return d if self.op == "<=" else -d

    def to_json(self):
        return {"type": "halfspace", "dim": self.dim, "threshold": self.threshold, "op": self.op}


@dataclass(frozen=True)
class Union(SetExpr):
    args: tuple[SetExpr, ...]

    def dims_used(self):
        return max((a.dims_used() for a in self.args), default=0)

    def evaluate(self, points):
        out = np.full(points.shape[1:], BIG)
        for a in self.args:
            out = np.minimum(out, a.evaluate(points))
        return out

    def to_json(self):
        return {"type": "union", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Intersection(SetExpr):
    args: tuple[SetExpr, ...]

    def dims_used(self):
        return max((a.dims_used() for a in self.args), default=0)

    def evaluate(self, points):
        out = np.full(points.shape[1:], -BIG)
        for a in self.args:
            out = np.maximum(out, a.evaluate(points))
        return out

    def to_json(self):
        return {"type": "intersection", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Complement(SetExpr):
    arg: SetExpr

    def dims_used(self):
        return self.arg.dims_used()

    def evaluate(self, points):
        return -self.arg.evaluate(points)

    def to_json(self):
        return {"type": "complement", "arg": self.arg.to_json()}


@dataclass(frozen=True)
class All(SetExpr):
    def evaluate(self, points):
        return np.full(points.shape[1:], -BIG)

    def to_json(self):
        return {"type": "all"}


@dataclass(frozen=True)
class Empty(SetExpr):
    def evaluate(self, points):
        return np.full(points.shape[1:], BIG)

    def to_json(self):
        return {"type": "empty"}


def eval_surface(s: SetExpr, z, ndim: int | None = None) -> float:
    """Surface value of ``s`` at a single state ``z``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise GeometryError("state must be a vector")
    if ndim is not None and z.shape[0] != ndim:
        raise GeometryError(f"state has dimension {z.shape[0]}, expected {ndim}")
    if s.dims_used() > z.shape[0]:
        raise GeometryError(
            f"set expression needs dimension {s.dims_used()}, state has {z.shape[0]}"
        )
    return float(s.evaluate(z.reshape(-1, 1))[0])


def discretize(s: SetExpr, grid: Grid) -> ValueField:
    """Sample ``s`` at every grid point."""
    if s.dims_used() > grid.ndim:
        raise GeometryError(
            f"set expression needs dimension {s.dims_used()}, grid has {grid.ndim}"
        )
    return ValueField(grid, np.asarray(s.evaluate(grid.states()), dtype=float))


def from_json(obj: Mapping[str, Any], path: str = "$") -> SetExpr:
    """Decode the scenario-file JSON form of a set expression."""
    if not isinstance(obj, Mapping) or "type" not in obj:
        raise GeometryError(f"{path}: expected an object with a 'type' key")
    kind = obj["type"]
    try:
        if kind == "box":
            dec = lambda v, inf: inf if v is None else float(v)  # noqa: E731
            lo = [dec(v, -np.inf) for v in obj["lo"]]
            hi = [dec(v, np.inf) for v in obj["hi"]]
            return Box(tuple(lo), tuple(hi))
        if kind == "halfspace":
            return HalfSpaceCoord(int(obj["dim"]), float(obj["threshold"]), obj.get("op", "<="))
        if kind in ("union", "intersection"):
            args = tuple(from_json(a, f"{path}.args[{i}]") for i, a in enumerate(obj["args"]))
            return Union(args) if kind == "union" else Intersection(args)
        if kind == "complement":
            return Complement(from_json(obj["arg"], f"{path}.arg"))
        if kind == "all":
            return All()
        if kind == "empty":
            return Empty()
    except KeyError as exc:
        raise GeometryError(f"{path}: missing key {exc}") from None
    except GeometryError as exc:
        if str(exc).startswith("$"):
            raise
        raise GeometryError(f"{path}: {exc}") from None
    raise GeometryError(f"{path}: unknown set type {kind!r}")


@dataclass
class Labeling:
    """Maps atom names to the sets where they hold (the inverse labeling)."""

    sets: dict[str, SetExpr] = field(default_factory=dict)
    ndim: int = 1

    def __post_init__(self):
        for name, s in self.sets.items():
            if not name:
                raise GeometryError("atom names must be nonempty")
            if s.dims_used() > self.ndim:
                raise GeometryError(
                    f"atom {name!r} needs dimension {s.dims_used()}, state has {self.ndim}"
                )

    def __getitem__(self, name: str) -> SetExpr:
        try:
            return self.sets[name]
        except KeyError:
            raise KeyError(f"unknown atom {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.sets

    def labels(self, z) -> set[str]:
        """Atoms holding at state ``z``."""
        return {p for p, s in self.sets.items() if eval_surface(s, z) <= 0.0}

    def to_json(self) -> dict[str, Any]:
        return {p: s.to_json() for p, s in self.sets.items()}

    @classmethod
    def from_json(cls, obj: Mapping[str, Any], ndim: int) -> "Labeling":
        return cls({p: from_json(s, f"$.labeling.{p}") for p, s in obj.items()}, ndim)

"""Rectangular grids, value fields and the numerical primitives on them."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class OutOfGridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid.

    Periodic dimensions cover ``[lo, hi)`` with ``n`` points; the others cover
    ``[lo, hi]`` including both ends.
    """

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        n = tuple(int(v) for v in self.n)
        periodic = tuple(bool(v) for v in self.periodic) or (False,) * len(n)
        if not (len(lo) == len(hi) == len(n) == len(periodic)):
            raise ValueError("grid bounds, counts and periodic flags differ in length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("grid requires lo < hi in every dimension")
        if any(k < 3 for k in n):
            raise ValueError("grid requires at least 3 points per dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "periodic", periodic)

    @property
    def ndim(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def spacing(self) -> np.ndarray:
        return np.array([
            (b - a) / (k if p else k - 1)
            for a, b, k, p in zip(self.lo, self.hi, self.n, self.periodic)
        ])

    @property
    def max_spacing(self) -> float:
        return float(self.spacing.max())

    def axes(self) -> list[np.ndarray]:
        dx = self.spacing
        return [a + dx[i] * np.arange(k) for i, (a, k) in enumerate(zip(self.lo, self.n))]

    def states(self) -> np.ndarray:
        """All grid points as an array of shape ``(ndim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def wrap(self, z) -> np.ndarray:
        """Map periodic coordinates of ``z`` (shape ``(ndim, ...)``) into range."""
        z = np.array(z, dtype=float)
        for i, p in enumerate(self.periodic):
            if p:
                period = self.hi[i] - self.lo[i]
                z[i] = self.lo[i] + np.mod(z[i] - self.lo[i], period)
        return z

    def contains(self, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, dtype=float)
        for i, p in enumerate(self.periodic):
            if not p and not (self.lo[i] - tol <= z[i] <= self.hi[i] + tol):
                return False
        return True

    def to_json(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n),
                "periodic": list(self.periodic)}

    @classmethod
    def from_json(cls, obj: dict) -> "Grid":
        ndim = len(obj["n"])
        return cls(tuple(obj["lo"]), tuple(obj["hi"]), tuple(obj["n"]),
                   tuple(obj.get("periodic", [False] * ndim)))


@dataclass(frozen=True)
class ValueField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    def __call__(self, z) -> float:
        return interpolate(self, z)


@dataclass(frozen=True)
class TimedValueField:
    """Value function sampled at backward times ``0 = t'_0 > ... > t'_K = -T``.

    ``values[k]`` holds the field at ``t'_k = -k * dt``.
    """

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.times), *self.grid.shape):
            raise ValueError("timed field shape does not match grid and time samples")
        if len(self.times) < 2:
            raise ValueError("timed field needs at least two time samples")
        steps = np.diff(self.times)
        if np.any(steps >= 0):
            raise ValueError("time samples must be strictly decreasing")
        if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("time samples must be uniform")

    @property
    def dt(self) -> float:
        return float(self.times[0] - self.times[1])

    @property
    def horizon(self) -> float:
        return float(-self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def slice(self, k: int) -> ValueField:
        return ValueField(self.grid, self.values[k])

    @property
    def final(self) -> ValueField:
        """Field at ``t' = -T``."""
        return self.slice(self.n_steps)

    def index_at(self, t: float) -> int:
        """Slice index nearest to ``t' = -T + t``; ties go to the more negative time."""
        T = self.horizon
        if not (-1e-9 <= t <= T + 1e-9):
            raise ValueError(f"time {t} outside [0, {T}]")
        k = int(np.floor((T - t) / self.dt + 0.5 + 1e-9))
        return min(max(k, 0), self.n_steps)


def upwind_gradients(v: ValueField) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Left and right one-sided first differences along every dimension."""
    return upwind_arrays(v.values, v.grid)


def upwind_arrays(values: np.ndarray, grid: Grid) -> tuple[list[np.ndarray], list[np.ndarray]]:
    left, right = [], []
    for i, (dx, p) in enumerate(zip(grid.spacing, grid.periodic)):
        if p:
            fwd = (np.roll(values, -1, axis=i) - values) / dx
            bwd = (values - np.roll(values, 1, axis=i)) / dx
        else:
            d = np.diff(values, axis=i) / dx
            lo = [slice(None)] * values.ndim
            hi = [slice(None)] * values.ndim
            lo[i] = slice(0, 1)
            hi[i] = slice(-1, None)
            # missing neighbour at the edge: copy the other one-sided difference
            bwd = np.concatenate([d[tuple(lo)], d], axis=i)
            fwd = np.concatenate([d, d[tuple(hi)]], axis=i)
        left.append(bwd)
        right.append(fwd)
    return left, right


def _cell_weights(grid: Grid, points: np.ndarray):
    """Lower corner indices and fractional offsets for ``points`` of shape ``(ndim, m)``."""
    dx = grid.spacing
    idx = np.empty(points.shape, dtype=np.intp)
    frac = np.empty(points.shape)
    for i in range(grid.ndim):
        x = (points[i] - grid.lo[i]) / dx[i]
        n = grid.n[i]
        if grid.periodic[i]:
            x = np.mod(x, n)
            j = np.floor(x).astype(np.intp)
            j = np.minimum(j, n - 1)
        else:
            tol = 1e-7
            if np.any((x < -tol) | (x > n - 1 + tol)):
                raise OutOfGridError(f"point outside grid along dimension {i}")
            x = np.clip(x, 0.0, n - 1)
            j = np.minimum(np.floor(x).astype(np.intp), n - 2)
        idx[i] = j
        frac[i] = x - j
    return idx, frac


def interpolate_array(values: np.ndarray, grid: Grid, points) -> np.ndarray:
    """Multilinear interpolation of ``values`` at ``points`` of shape ``(ndim, m)``."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] != grid.ndim:
        raise ValueError(f"points have dimension {points.shape[0]}, grid has {grid.ndim}")
    idx, frac = _cell_weights(grid, points)
    out = np.zeros(points.shape[1])
    for corner in range(1 << grid.ndim):
        w = np.ones(points.shape[1])
        sel = []
        for i in range(grid.ndim):
            if corner >> i & 1:
                w = w * frac[i]
                j = idx[i] + 1
                if grid.periodic[i]:
                    j = j % grid.n[i]
            else:
                w = w * (1.0 - frac[i])
                j = idx[i]
            sel.append(j)
        out += w * values[tuple(sel)]
    return out


def interpolate(v: ValueField, z) -> float:
    """Multilinear interpolation of ``v`` at a single state ``z``."""
    return float(interpolate_array(v.values, v.grid, np.asarray(z, dtype=float))[0])


def interpolate_timed(v: TimedValueField, z, t: float) -> float:
    """Value at state ``z`` and forward time ``t``, using the slice nearest ``-T + t``."""
    return float(interpolate_array(v.values[v.index_at(t)], v.grid, np.asarray(z, dtype=float))[0])


def central_gradient_at(values: np.ndarray, grid: Grid, z) -> np.ndarray:
    """Average of the left/right differences, interpolated at ``z``.

    A one-cell shift keeps the multilinear weights, so this equals
    interpolating the averaged-upwind field, but touches only a local stencil.
    """
    z = np.asarray(z, dtype=float)
    dx = grid.spacing
    pts = [z]
    for i in range(grid.ndim):
        for sgn in (1.0, -1.0):
            q = z.copy()
            q[i] += sgn * dx[i]
            pts.append(q)
    pts = np.stack(pts, axis=1)
    # near a non-periodic edge, fall back to the one-sided difference
    clip_lo = np.array(grid.lo)[:, None]
    clip_hi = np.array(grid.hi)[:, None]
    nonper = ~np.array(grid.periodic)
    pts[nonper] = np.clip(pts[nonper], clip_lo[nonper], clip_hi[nonper])
    vals = interpolate_array(values, grid, pts)
    grad = np.empty(grid.ndim)
    for i in range(grid.ndim):
        a, b = pts[i, 1 + 2 * i], pts[i, 2 + 2 * i]
        grad[i] = (vals[1 + 2 * i] - vals[2 + 2 * i]) / (a - b) if a != b else 0.0
    return grad


# ---------------------------------------------------------------------------
# export

def _sidecar(grid: Grid, times: Sequence[float] | None, shape: tuple[int, ...]) -> dict:
    return {
        "dtype": "float64",
        "byteorder": "little",
        "shape": list(shape),
        "grid": grid.to_json(),
        "times": None if times is None else [float(t) for t in times],
    }


def save_field(field: ValueField | TimedValueField, path: str | Path) -> Path:
    """Write ``path`` (raw little-endian float64) and ``path.json`` (metadata)."""
    path = Path(path)
    times = getattr(field, "times", None)
    arr = np.ascontiguousarray(field.values, dtype="<f8")
    path.write_bytes(arr.tobytes())
    meta = _sidecar(field.grid, times, arr.shape)
    path.with_name(path.name + ".json").write_text(json.dumps(meta, indent=1))
    return path


def load_field(path: str | Path) -> ValueField | TimedValueField:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    grid = Grid.from_json(meta["grid"])
    raw = path.read_bytes()
    shape = tuple(meta["shape"])
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    if meta["times"] is None:
        return ValueField(grid, arr)
    return TimedValueField(grid, np.asarray(meta["times"]), arr)


def export_csv(field: ValueField, path: str | Path) -> Path:
    """CSV with one row per grid point: coordinates then value (1D or 2D only)."""
    grid = field.grid
    if grid.ndim > 2:
        raise ValueError("CSV export supports at most 2 dimensions; project first")
    path = Path(path)
    pts = grid.states().reshape(grid.ndim, -1)
    cols = [f"x{i}" for i in range(grid.ndim)] + ["value"]
    data = np.column_stack([pts.T, field.values.reshape(-1)])
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.10g")
    return path


def project_min(field: ValueField, keep: Sequence[int]) -> ValueField:
    """Minimum over the dropped dimensions (membership projection onto ``keep``)."""
    grid = field.grid
    drop = tuple(i for i in range(grid.ndim) if i not in keep)
    values = field.values.min(axis=drop) if drop else field.values
    sub = Grid(tuple(grid.lo[i] for i in keep), tuple(grid.hi[i] for i in keep),
               tuple(grid.n[i] for i in keep), tuple(grid.periodic[i] for i in keep))
    return ValueField(sub, values)

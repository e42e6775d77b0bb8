"""Grid-based solvers for the reach and avoid Hamilton-Jacobi equations.

Both equations are integrated backward from ``t' = 0`` to ``t' = -T`` with a
global Lax-Friedrichs Hamiltonian, first-order upwind differences and
explicit Euler steps. After every step the tube is frozen,
``V <- min(V_new, V_old)``, so a state that can reach the target (or cannot
escape the avoid set) within a shorter horizon stays in the tube.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approx import ApproxDirection
from .dynamics import AVOID, REACH, ControlAffineModel
from .grid import Grid, TimedValueField, ValueField, upwind_arrays


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    """Solver settings.

    ``kappa`` is the approximation margin in grid cells: an under-approximated
    set is read at level ``-kappa * max_dx``, an over-approximated one at
    ``+kappa * max_dx``. ``max_dt`` optionally caps the step below the CFL
    bound (and sets it when the dynamics are frozen).
    """

    horizon: float
    cfl: float = 0.5
    kappa: float = 1.0
    direction: ApproxDirection = ApproxDirection.EXACT
    max_dt: float | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("CFL number must lie in (0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.direction is ApproxDirection.INVALID:
            raise ValueError("a solve cannot be requested with direction Invalid")

    def with_direction(self, direction: ApproxDirection) -> "SolveOptions":
        return SolveOptions(self.horizon, self.cfl, self.kappa, direction, self.max_dt)


def threshold(direction: ApproxDirection, kappa: float, grid: Grid) -> float:
    """Sub-level at which a solved field is read for the given direction."""
    margin = kappa * grid.max_spacing
    if direction is ApproxDirection.UNDER:
        return -margin
    if direction is ApproxDirection.OVER:
        return margin
    return 0.0


def dissipation(model: ControlAffineModel, grid: Grid, states: np.ndarray | None = None) -> np.ndarray:
    """Per-dimension bound on ``|dH/dp_i|`` over the grid and the control box."""
    states = grid.states() if states is None else states
    f = model.drift(states)
    g = model.input_map(states)
    umag = np.maximum(np.abs(model.u_min), np.abs(model.u_max))
    bound = np.abs(f) + np.einsum("ij...,j->i...", np.abs(g), umag)
    return bound.reshape(grid.ndim, -1).max(axis=1)


def time_grid(model: ControlAffineModel, grid: Grid, opts: SolveOptions) -> tuple[float, int]:
    """Uniform step ``dt`` and step count covering the horizon under the CFL bound."""
    alpha = dissipation(model, grid)
    rate = float(np.sum(alpha / grid.spacing))
    dt_max = opts.cfl / rate if rate > 0 else math.inf
    if opts.max_dt is not None:
        dt_max = min(dt_max, opts.max_dt)
    if math.isinf(dt_max):
        n = 1
    else:
        n = max(1, math.ceil(opts.horizon / dt_max - 1e-9))
    return opts.horizon / n, n


def _evolve(initial: np.ndarray, grid: Grid, model: ControlAffineModel, opts: SolveOptions,
            mode: str, constraint: np.ndarray | None = None) -> TimedValueField:
    if model.n_x != grid.ndim:
        raise ValueError(f"model has {model.n_x} states, grid has {grid.ndim} dimensions")
    if initial.shape != grid.shape:
        raise ValueError("initial field does not match the grid")
    states = grid.states()
    f = model.drift(states)
    g = model.input_map(states)
    alpha = dissipation(model, grid, states)
    dt, n = time_grid(model, grid, opts)

    out = np.empty((n + 1, *grid.shape))
    v = np.array(initial, dtype=float)
    if constraint is not None:
        v = np.maximum(v, constraint)
    out[0] = v
    lo = model.u_min.reshape(-1, *([1] * grid.ndim))
    hi = model.u_max.reshape(-1, *([1] * grid.ndim))
    for k in range(1, n + 1):
        left, right = upwind_arrays(v, grid)
        p = np.stack([(a + b) / 2 for a, b in zip(left, right)])
        c = np.einsum("i...,ij...->j...", p, g)
        if mode == REACH:
            u = np.where(c > 0, lo, hi)
        else:
            u = np.where(c < 0, lo, hi)
        ham = np.einsum("i...,i...->...", p, f) + np.einsum("j...,j...->...", c, u)
        diss = sum(a * (r - l) / 2 for a, l, r in zip(alpha, left, right))
        step = v + dt * (ham + diss)
        v = np.minimum(step, v)
        if constraint is not None:
            v = np.maximum(v, constraint)
        if not np.all(np.isfinite(v)):
            raise SolverError(f"non-finite values after step {k} of {n}")
        out[k] = v
    return TimedValueField(grid, -dt * np.arange(n + 1), out)


def solve_reach(target: ValueField, constraint: ValueField | None, model: ControlAffineModel,
                opts: SolveOptions) -> TimedValueField:
    """Backward reachable tube of ``target`` while staying in ``constraint``.

    States outside the constraint are held non-negative after every step
    (and in the initial slice), so every slice of the tube lies inside the
    constraint set at level 0.
    """
    if constraint is not None and constraint.grid != target.grid:
        raise ValueError("target and constraint live on different grids")
    c = None if constraint is None else constraint.values
    return _evolve(target.values, target.grid, model, opts, REACH, c)


def solve_avoid(avoid_set: ValueField, model: ControlAffineModel, opts: SolveOptions) -> TimedValueField:
    """States from which every control enters ``avoid_set`` within the horizon."""
    return _evolve(avoid_set.values, avoid_set.grid, model, opts, AVOID)


def rci(candidate: ValueField, model: ControlAffineModel, opts: SolveOptions) -> TimedValueField:
    """Finite-horizon control invariant subset of ``candidate``.

    Computed as the complement of the avoid tube of the complement. The
    returned field is the negated avoid solution, so membership is again its
    zero sub-level set; it is non-decreasing along backward time.
    """
    avoid = solve_avoid(ValueField(candidate.grid, -candidate.values), model, opts)
    return TimedValueField(avoid.grid, avoid.times, -avoid.values)


def members(field: ValueField | TimedValueField, level: float = 0.0) -> np.ndarray:
    """Boolean membership mask of the ``level`` sub-level set."""
    return field.values <= level

"""Temporal logic trees from Hamilton-Jacobi reachability.

Build a tree for a finite-trace LTL formula over a control-affine model,
decide whether satisfying controls exist, and query least-restrictive
control sets online.
"""
from .approx import ApproxDirection
from .ctrlexists import ctrl_exists, gate
from .ctrlsynth import ControlSet, HalfSpace, least_restrictive_ctrl, sample_control
from .formula import parse
from .geometry import Box, Labeling
from .grid import Grid, TimedValueField, ValueField
from .hjsolver import SolveOptions, rci, solve_avoid, solve_reach
from .sim import monitor, run_closed_loop
from .tlt import Tlt, construct, prune, root_nonempty

__version__ = "0.1.0"

__all__ = [
    "ApproxDirection", "Box", "ControlSet", "Grid", "HalfSpace", "Labeling", "SolveOptions",
    "TimedValueField", "Tlt", "ValueField", "construct", "ctrl_exists", "gate",
    "least_restrictive_ctrl", "monitor", "parse", "prune", "rci", "root_nonempty",
    "run_closed_loop", "sample_control", "solve_avoid", "solve_reach",
]

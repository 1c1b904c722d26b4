"""Backstepping boundary stabilization of the KdV-KdV Boussinesq system."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .critical import CriticalQuery, critical_lengths, is_critical, nearest_critical
from .grid import DomainError, Grid1D, Grid2D, make_grid
from .kernel import KernelPair, ScalarKernelProblem, solve_kernel_pair
from .sim import InitialData, SimConfig, Trajectory, simulate
from .transform import StatePair, TargetPair

__all__ = [
    "CriticalQuery",
    "DomainError",
    "Grid1D",
    "Grid2D",
    "InitialData",
    "KernelPair",
    "ScalarKernelProblem",
    "SimConfig",
    "StatePair",
    "TargetPair",
    "Trajectory",
    "critical_lengths",
    "is_critical",
    "make_grid",
    "nearest_critical",
    "simulate",
    "solve_kernel_pair",
]

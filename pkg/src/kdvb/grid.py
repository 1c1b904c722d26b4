"""Uniform grids, finite-difference operators, trapezoid quadrature and norms."""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp

MIN_NODES = 7


class DomainError(ValueError):
    """Raised when an argument lies outside the admissible domain."""


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Uniform mesh ``x_i = i*h`` on ``[0, L]`` with ``n`` nodes."""

    length: float
    n: int

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError(f"L must be positive, got {self.length}")
        if int(self.n) != self.n or self.n < MIN_NODES:
            raise DomainError(f"n must be an integer >= {MIN_NODES}, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def h(self) -> float:
        return self.length / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        x = np.arange(self.n) * self.h
        x[-1] = self.length
        return x

    def same_as(self, other: "Grid1D") -> bool:
        return self.n == other.n and self.length == other.length

    def __eq__(self, other):
        return isinstance(other, Grid1D) and self.same_as(other)

    def __hash__(self):
        return hash((self.length, self.n))


@dataclass(frozen=True)
class Grid2D:
    """Tensor grid on the square ``[0, L]^2``; both directions share one mesh."""

    gx: Grid1D
    gy: Grid1D

    def __post_init__(self):
        if not self.gx.same_as(self.gy):
            raise DomainError("Grid2D requires identical x and y grids")

    @classmethod
    def square(cls, g: Grid1D) -> "Grid2D":
        return cls(g, g)

    @property
    def n(self) -> int:
        return self.gx.n

    @property
    def length(self) -> float:
        return self.gx.length

    @property
    def h(self) -> float:
        return self.gx.h


def make_grid(L: float, n: int) -> Grid1D:
    return Grid1D(L, n)


def fd_weights(offsets, order: int) -> np.ndarray:
    """Taylor-matching weights (in units of h**-order) for the given node offsets.

    Solves ``sum_k c_k * o_k**m / m! = delta_{m,order}`` for ``m < len(offsets)``.
    """
    offsets = np.asarray(offsets, dtype=float)
    m = len(offsets)
    A = np.array([offsets**p / factorial(p) for p in range(m)])
    b = np.zeros(m)
    b[order] = 1.0
    return np.linalg.solve(A, b)


def _assemble(n: int, rows: list[tuple[int, list[int], np.ndarray]], scale: float) -> sp.csr_matrix:
    I, J, V = [], [], []
    for i, cols, coef in rows:
        I.extend([i] * len(cols))
        J.extend(cols)
        V.extend(coef * scale)
    return sp.csr_matrix((V, (I, J)), shape=(n, n))


def d1_matrix(g: Grid1D) -> sp.csr_matrix:
    """First derivative: centered inside, second-order one-sided at both ends."""
    n = g.n
    rows = [(0, [0, 1, 2], np.array([-1.5, 2.0, -0.5]))]
    c = np.array([-0.5, 0.5])
    rows += [(i, [i - 1, i + 1], c) for i in range(1, n - 1)]
    rows.append((n - 1, [n - 3, n - 2, n - 1], np.array([0.5, -2.0, 1.5])))
    return _assemble(n, rows, 1.0 / g.h)


def d3_matrix(g: Grid1D) -> sp.csr_matrix:
    """Third derivative.

    Rows ``2..n-3`` use the centered five-point stencil
    ``(-u[i-2] + 2u[i-1] - 2u[i+1] + u[i+2]) / (2h^3)``; the two rows nearest
    each end use five-node one-sided Taylor stencils (second order).
    """
    n = g.n
    centered = np.array([-0.5, 1.0, 0.0, -1.0, 0.5])
    rows = []
    left = list(range(5))
    right = list(range(n - 5, n))
    for i in (0, 1):
        rows.append((i, left, fd_weights(np.array(left) - i, 3)))
    for i in range(2, n - 2):
        rows.append((i, [i - 2, i - 1, i, i + 1, i + 2], centered))
    for i in (n - 2, n - 1):
        rows.append((i, right, fd_weights(np.array(right) - i, 3)))
    return _assemble(n, rows, 1.0 / g.h**3)


def trapezoid_weights(g: Grid1D) -> np.ndarray:
    wts = np.full(g.n, g.h)
    wts[0] = wts[-1] = 0.5 * g.h
    return wts


def _check_len(g: Grid1D, *vecs):
    for v in vecs:
        if np.shape(v) != (g.n,):
            raise DomainError(f"expected vector of length {g.n}, got shape {np.shape(v)}")


def l2_norm(v, g: Grid1D) -> float:
    _check_len(g, v)
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(trapezoid_weights(g) @ (v * v)))


def x0_norm(eta, w, g: Grid1D) -> float:
    """Discrete ``[L^2(0,L)]^2`` norm of the pair ``(eta, w)``."""
    _check_len(g, eta, w)
    eta = np.asarray(eta, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(np.sqrt(trapezoid_weights(g) @ (eta * eta + w * w)))

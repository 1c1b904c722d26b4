"""Backstepping kernel pair on the square ``[0, L]^2``.

The coupled system for ``(k, s)`` is decoupled into two scalar problems

    v_yyy + v_y + v_xxx + v_x + lam*v =  lam*delta(x - y)
    u_yyy + u_y + u_xxx + u_x - lam*u = -lam*delta(x - y)

with ``k = (v + u)/2`` and ``s = (v - u)/2``.  Each scalar problem carries
homogeneous Dirichlet data on all four edges and homogeneous Neumann data
``d/dy = 0`` on ``y = 0`` and ``y = L``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DomainError, Grid1D, Grid2D, d1_matrix, d3_matrix

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10
REFINE_STEPS = 3


class KernelSolveError(RuntimeError):
    """The discrete kernel system could not be solved to tolerance."""


@dataclass(frozen=True)
class ScalarKernelProblem:
    grid: Grid2D
    lam: float
    sign: int = 1
    source_scale: float = 1.0

    def __post_init__(self):
        if self.lam == 0:
            raise DomainError("lambda must be nonzero")
        if self.sign not in (1, -1):
            raise DomainError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True, eq=False)
class KernelPair:
    """Discrete kernels ``k[i, j] = k(x_i, y_j)`` and ``s`` with boundary traces.

    ``trace_kx0[j]`` is ``k_x(0, y_j)``, ``trace_kxL[j]`` is ``k_x(L, y_j)``,
    and likewise for ``s``.
    """

    grid: Grid2D
    lam: float
    k_vals: np.ndarray
    s_vals: np.ndarray
    trace_kx0: np.ndarray
    trace_sx0: np.ndarray
    trace_kxL: np.ndarray
    trace_sxL: np.ndarray

    @property
    def g(self) -> Grid1D:
        return self.grid.gx

    @property
    def n(self) -> int:
        return self.grid.n

    @classmethod
    def from_fields(cls, g: Grid1D, lam: float, k_vals, s_vals) -> "KernelPair":
        """Build a pair from raw node values, computing the x-traces."""
        k_vals = np.array(k_vals, dtype=float)
        s_vals = np.array(s_vals, dtype=float)
        if k_vals.shape != (g.n, g.n) or s_vals.shape != (g.n, g.n):
            raise DomainError(f"kernel fields must have shape {(g.n, g.n)}")
        h = g.h
        left = lambda a: (-1.5 * a[0] + 2.0 * a[1] - 0.5 * a[2]) / h
        right = lambda a: (0.5 * a[-3] - 2.0 * a[-2] + 1.5 * a[-1]) / h
        return cls(
            grid=Grid2D.square(g),
            lam=float(lam),
            k_vals=k_vals,
            s_vals=s_vals,
            trace_kx0=left(k_vals),
            trace_sx0=left(s_vals),
            trace_kxL=right(k_vals),
            trace_sxL=right(s_vals),
        )

    @classmethod
    def zero(cls, g: Grid1D, lam: float = 1.0) -> "KernelPair":
        z = np.zeros((g.n, g.n))
        return cls.from_fields(g, lam, z, z)

    def ky(self) -> np.ndarray:
        """``k_y`` on the grid (row-wise first derivative in y)."""
        return (d1_matrix(self.g) @ self.k_vals.T).T

    def sy(self) -> np.ndarray:
        return (d1_matrix(self.g) @ self.s_vals.T).T

    def kx(self) -> np.ndarray:
        return d1_matrix(self.g) @ self.k_vals

    def sx(self) -> np.ndarray:
        return d1_matrix(self.g) @ self.s_vals


def _y_operator(g: Grid1D) -> sp.csr_matrix:
    """``d^3/dy^3 + d/dy`` on interior nodes with Dirichlet and ghost-Neumann ends.

    The ghost values come from the centered relation ``(u[1] - u[-1]) / 2h = 0``
    at ``j = 0`` (and its mirror at ``j = n-1``), i.e. ``u[-1] = u[1]``.
    """
    n, h = g.n, g.h
    m = n - 2
    c3 = np.array([-0.5, 1.0, 0.0, -1.0, 0.5]) / h**3
    c1 = np.array([0.0, -0.5, 0.0, 0.5, 0.0]) / h
    c = c3 + c1
    I, J, V = [], [], []
    for j in range(1, n - 1):
        for off, coef in zip(range(-2, 3), c):
            jj = j + off
            if jj == -1:
                jj = 1
            elif jj == n:
                jj = n - 2
            if jj in (0, n - 1) or coef == 0.0:
                continue
            I.append(j - 1)
            J.append(jj - 1)
            V.append(coef)
    return sp.csr_matrix((V, (I, J)), shape=(m, m))


def _x_operator(g: Grid1D) -> sp.csr_matrix:
    """``d^3/dx^3 + d/dx`` restricted to interior rows and interior columns."""
    D = (d3_matrix(g) + d1_matrix(g)).tocsr()
    return D[1:-1, 1:-1]


def assemble_scalar_kernel(p: ScalarKernelProblem) -> tuple[sp.csc_matrix, np.ndarray]:
    """Collocation system for one scalar kernel problem.

    Unknowns are interior values ordered ``idx = (i-1)*(n-2) + (j-1)``.
    The right-hand side is the discrete line source ``sign*lam/h`` on the
    interior diagonal nodes.
    """
    g = p.grid.gx
    m = g.n - 2
    eye = sp.identity(m, format="csr")
    M = sp.kron(_x_operator(g), eye) + sp.kron(eye, _y_operator(g))
    M = M + p.sign * p.lam * sp.identity(m * m)
    rhs = np.zeros(m * m)
    diag = np.arange(m)
    rhs[diag * m + diag] = p.sign * p.lam * p.source_scale / g.h
    return M.tocsc(), rhs


def solve_scalar_kernel(p: ScalarKernelProblem, return_residual: bool = False):
    """Sparse LU solve of the scalar kernel system; returns an ``n x n`` field.

    A few steps of iterative refinement are applied.  The relative residual
    ``||Mx - b|| / ||b||`` is logged when it misses ``RESIDUAL_TOL``; the
    system is badly conditioned at odd ``n`` so this does happen, and callers
    that need the number ask for it with ``return_residual=True``.
    """
    M, rhs = assemble_scalar_kernel(p)
    g = p.grid.gx
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise KernelSolveError(
            f"singular kernel system (n={g.n}, lambda={p.lam}, sign={p.sign})"
        ) from exc
    x = lu.solve(rhs)
    bnorm = np.linalg.norm(rhs)
    res = np.linalg.norm(M @ x - rhs) / bnorm
    for _ in range(REFINE_STEPS):
        if res < RESIDUAL_TOL:
            break
        x_new = x + lu.solve(rhs - M @ x)
        res_new = np.linalg.norm(M @ x_new - rhs) / bnorm
        if not res_new < res:
            break
        x, res = x_new, res_new
    if not np.all(np.isfinite(x)):
        raise KernelSolveError(
            f"non-finite kernel solution (n={g.n}, lambda={p.lam}, sign={p.sign})"
        )
    if res >= RESIDUAL_TOL:
        log.warning(
            "kernel residual %.2e exceeds %.0e (n=%d, lambda=%g, sign=%d)",
            res, RESIDUAL_TOL, g.n, p.lam, p.sign,
        )
    out = np.zeros((g.n, g.n))
    out[1:-1, 1:-1] = x.reshape(g.n - 2, g.n - 2)
    if return_residual:
        return out, float(res)
    return out


def compose_kernel_pair(v: np.ndarray, u: np.ndarray, p_meta: ScalarKernelProblem) -> KernelPair:
    if np.shape(v) != np.shape(u):
        raise DomainError(f"shape mismatch: {np.shape(v)} vs {np.shape(u)}")
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    return KernelPair.from_fields(p_meta.grid.gx, p_meta.lam, 0.5 * (v + u), 0.5 * (v - u))


def solve_kernel_pair(g: Grid1D, lam: float) -> KernelPair:
    """Solve both scalar problems on the square over ``g`` and compose ``(k, s)``."""
    from .critical import is_critical

    if is_critical(g.length):
        log.warning("L=%g is a critical length; kernel solve proceeds unverified", g.length)
    G = Grid2D.square(g)
    v = solve_scalar_kernel(ScalarKernelProblem(G, lam, +1))
    u = solve_scalar_kernel(ScalarKernelProblem(G, lam, -1))
    return compose_kernel_pair(v, u, ScalarKernelProblem(G, lam, +1))


def _apply_xy(g: Grid1D, F: np.ndarray) -> np.ndarray:
    """``(d3+d1)_x F + (d3+d1)_y F`` using the full-grid stencils."""
    D = (d3_matrix(g) + d1_matrix(g)).tocsr()
    return D @ F + (D @ F.T).T


def kernel_residual(kp: KernelPair, exclusion_band: int = 3) -> tuple[float, float]:
    """Max collocation residual of both kernel equations away from the diagonal."""
    if exclusion_band < 2:
        raise DomainError("exclusion_band must be >= 2")
    g = kp.g
    lam = kp.lam
    rk = _apply_xy(g, kp.k_vals) + lam * kp.s_vals
    rs = _apply_xy(g, kp.s_vals) + lam * kp.k_vals
    n = g.n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    mask = (i >= 2) & (i <= n - 3) & (j >= 2) & (j <= n - 3) & (np.abs(i - j) > exclusion_band)
    if not mask.any():
        return 0.0, 0.0
    return float(np.abs(rk[mask]).max()), float(np.abs(rs[mask]).max())

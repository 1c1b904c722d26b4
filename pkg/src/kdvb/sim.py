"""Crank-Nicolson integration of the KdV-KdV system on ``[0, L]``.

Plant::

    eta_t + w_x + w_xxx + (eta w)_x = 0
    w_t + eta_x + eta_xxx + w w_x   = 0

with ``eta = w = 0`` at both ends, ``eta_x(0) = f`` and ``w_x(L) = g``.

The unknown vector stacks ``[eta; w]``.  Rows ``0, n-1, n, 2n-1`` hold the
Dirichlet conditions, row ``1`` holds the one-sided ``eta_x(0)`` condition and
row ``2n-2`` the one-sided ``w_x(L)`` condition; every other row carries the
evolution equation.  This placement leaves the homogeneous generator with a
purely imaginary spectrum, which is what makes the open loop conservative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DomainError, Grid1D, d1_matrix, d3_matrix, x0_norm
from .kernel import KernelPair
from .transform import StatePair, feedback_f, feedback_g, forward_transform

log = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e6
DYNAMICS = ("linear", "nonlinear")
CONTROLS = ("open", "closed")
BC_VARIANTS = ("controlled", "homogeneous")


class SimulationError(RuntimeError):
    """Linear-solve failure or blow-up; ``step_index`` names the failing step."""

    def __init__(self, msg: str, step_index: int):
        super().__init__(msg)
        self.step_index = step_index


@dataclass(frozen=True)
class InitialData:
    """Initial profile used for both ``eta`` and ``w``.

    ``kind`` is ``"sine_mode"`` (``m``, ``amplitude``), ``"gaussian"``
    (``center``, ``width``, ``amplitude``) or ``"explicit"`` (``eta``, ``w``).
    Generated profiles vanish at both ends; a Gaussian has its endpoint values
    removed by subtracting the linear interpolant.
    """

    kind: str = "sine_mode"
    m: int = 1
    amplitude: float = 0.01
    center: float = 0.5
    width: float = 0.1
    eta: Optional[tuple] = None
    w: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("sine_mode", "gaussian", "explicit"):
            raise DomainError(f"unknown initial kind {self.kind!r}")
        if self.kind == "explicit" and (self.eta is None or self.w is None):
            raise DomainError("explicit initial data needs both eta and w")
        if self.kind == "gaussian" and not self.width > 0:
            raise DomainError("gaussian width must be positive")

    def profile(self, g: Grid1D) -> StatePair:
        x = g.nodes
        if self.kind == "sine_mode":
            p = self.amplitude * np.sin(self.m * np.pi * x / g.length)
            p[0] = p[-1] = 0.0
            return StatePair(p, p.copy(), 0.0)
        if self.kind == "gaussian":
            c = self.center * g.length
            p = self.amplitude * np.exp(-(((x - c) / self.width) ** 2))
            p -= p[0] + (p[-1] - p[0]) * x / g.length
            p[0] = p[-1] = 0.0
            return StatePair(p, p.copy(), 0.0)
        eta = np.asarray(self.eta, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if eta.shape != (g.n,) or w.shape != (g.n,):
            raise DomainError(f"explicit initial data must have length {g.n}")
        return StatePair(eta, w, 0.0)


@dataclass(frozen=True)
class SimConfig:
    grid: Grid1D
    dt: float
    T: float
    lam: float = 1.0
    dynamics: str = "linear"
    control: str = "open"
    bc_variant: str = "homogeneous"
    initial: InitialData = field(default_factory=InitialData)
    record_every: int = 1
    snapshots: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt:
            raise DomainError(f"T must be >= dt, got T={self.T}, dt={self.dt}")
        if self.dynamics not in DYNAMICS:
            raise DomainError(f"dynamics must be one of {DYNAMICS}")
        if self.control not in CONTROLS:
            raise DomainError(f"control must be one of {CONTROLS}")
        if self.bc_variant not in BC_VARIANTS:
            raise DomainError(f"bc_variant must be one of {BC_VARIANTS}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise DomainError("record_every must be an integer >= 1")
        if self.control == "closed" and self.bc_variant == "homogeneous":
            raise DomainError("closed-loop control needs bc_variant 'controlled'")

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def dt_exceeds_h(self) -> bool:
        return self.dt > self.grid.h


@dataclass
class Trajectory:
    times: np.ndarray
    energies: np.ndarray
    controls_f: np.ndarray
    controls_g: np.ndarray
    x0_norms: np.ndarray
    target_norms: Optional[np.ndarray] = None
    snapshots: Optional[list] = None
    failure: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.failure is None


def boundary_rows(g: Grid1D) -> dict[str, int]:
    n = g.n
    return {"eta0": 0, "etaL": n - 1, "w0": n, "wL": 2 * n - 1, "f": 1, "g": 2 * n - 2}


def build_linear_operator(g: Grid1D, bc_variant: str = "homogeneous") -> sp.csr_matrix:
    """Generator rows ``(eta, w) -> (w_x + w_xxx, eta_x + eta_xxx)`` with boundary rows.

    Both variants share the matrix; they differ in the Neumann data placed on
    the right-hand side (zero for ``homogeneous``, ``f``/``g`` for
    ``controlled``).  See ``mass_matrix`` for which rows are algebraic.
    """
    if bc_variant not in BC_VARIANTS:
        raise DomainError(f"bc_variant must be one of {BC_VARIANTS}")
    n = g.n
    D = (d1_matrix(g) + d3_matrix(g)).tocsr()
    A = sp.bmat([[None, D], [D, None]], format="lil")
    rows = boundary_rows(g)
    for key in ("eta0", "etaL", "w0", "wL"):
        r = rows[key]
        A.rows[r], A.data[r] = [r], [1.0]
    d1 = d1_matrix(g).toarray()
    r = rows["f"]
    A.rows[r], A.data[r] = [0, 1, 2], list(d1[0, :3])
    r = rows["g"]
    A.rows[r], A.data[r] = [2 * n - 3, 2 * n - 2, 2 * n - 1], list(d1[-1, -3:])
    return A.tocsr()


def mass_matrix(g: Grid1D) -> sp.csr_matrix:
    """Identity with zeros on the algebraic (boundary) rows."""
    diag = np.ones(2 * g.n)
    diag[list(boundary_rows(g).values())] = 0.0
    return sp.diags(diag, format="csr")


def nonlinear_term(eta: np.ndarray, w: np.ndarray, g: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """``(-(eta w)_x, -w w_x)`` by centered differences, zero at the end nodes."""
    h2 = 2.0 * g.h
    ew = eta * w
    a = np.zeros_like(eta)
    b = np.zeros_like(w)
    a[1:-1] = -(ew[2:] - ew[:-2]) / h2
    b[1:-1] = -w[1:-1] * (w[2:] - w[:-2]) / h2
    return a, b


class Stepper:
    """Factorized Crank-Nicolson step for a fixed grid and time step."""

    def __init__(self, cfg: SimConfig, kp: Optional[KernelPair] = None):
        if (cfg.control == "closed") != (kp is not None):
            raise DomainError("kernels must be given exactly when control is 'closed'")
        if kp is not None and not kp.g.same_as(cfg.grid):
            raise DomainError("kernel grid does not match the simulation grid")
        self.cfg = cfg
        self.kp = kp
        g = cfg.grid
        A = build_linear_operator(g, cfg.bc_variant)
        M = mass_matrix(g)
        self.lhs_op = (M + 0.5 * cfg.dt * A).tocsr()
        self.lhs = spla.splu(self.lhs_op.tocsc())
        self.rhs_op = (M - 0.5 * cfg.dt * A).tocsr()
        self.rows = boundary_rows(g)

    def controls(self, z: StatePair) -> tuple[float, float]:
        if self.kp is None:
            return 0.0, 0.0
        return feedback_f(self.kp, z), feedback_g(self.kp, z)

    def __call__(self, z: StatePair, index: int = 0) -> StatePair:
        cfg, g, n = self.cfg, self.cfg.grid, self.cfg.grid.n
        b = self.rhs_op @ z.stacked()
        if cfg.dynamics == "nonlinear":
            a, c = nonlinear_term(z.eta, z.w, g)
            b[:n] += cfg.dt * a
            b[n:] += cfg.dt * c
        for key in ("eta0", "etaL", "w0", "wL"):
            b[self.rows[key]] = 0.0
        f, gg = self.controls(z)
        b[self.rows["f"]] = f
        b[self.rows["g"]] = gg
        znew = self.lhs.solve(b)
        # one refinement step: the unit boundary rows sit next to O(dt/h^3)
        # interior rows and plain LU leaves ~1e-11 on them
        znew += self.lhs.solve(b - self.lhs_op @ znew)
        znew[[self.rows[k] for k in ("eta0", "etaL", "w0", "wL")]] = 0.0
        if not np.all(np.isfinite(znew)) or np.abs(znew).max() > BLOWUP_THRESHOLD:
            raise SimulationError(f"blow-up at step {index}", index)
        return StatePair(znew[:n], znew[n:], z.t + cfg.dt)


def step(state: StatePair, cfg: SimConfig, kp: Optional[KernelPair] = None) -> StatePair:
    """One Crank-Nicolson step (factorizes afresh; use ``Stepper`` in loops)."""
    return Stepper(cfg, kp)(state)


def simulate(cfg: SimConfig, kp: Optional[KernelPair] = None) -> Trajectory:
    """Integrate to ``cfg.T``, recording every ``cfg.record_every`` steps.

    A blow-up stops the run; the trajectory recorded so far is returned with
    ``failure`` set.
    """
    g = cfg.grid
    stepper = Stepper(cfg, kp)
    if kp is not None and kp.lam != cfg.lam:
        log.warning("kernel lambda %g differs from config lambda %g", kp.lam, cfg.lam)
    z = cfg.initial.profile(g)
    rec: dict[str, list] = {k: [] for k in ("t", "E", "f", "g", "x0", "tn", "snap")}

    def record(z: StatePair):
        nrm = x0_norm(z.eta, z.w, g)
        f, gg = stepper.controls(z)
        rec["t"].append(z.t)
        rec["E"].append(0.5 * nrm * nrm)
        rec["f"].append(f)
        rec["g"].append(gg)
        rec["x0"].append(nrm)
        if kp is not None:
            tp = forward_transform(kp, z)
            rec["tn"].append(x0_norm(tp.u, tp.v, g))
        if cfg.snapshots:
            rec["snap"].append(z)

    failure = None
    record(z)
    for m in range(1, cfg.steps + 1):
        try:
            z = stepper(z, m)
        except SimulationError as exc:
            failure = str(exc)
            log.warning("simulation stopped: %s", exc)
            break
        z = StatePair(z.eta, z.w, m * cfg.dt)
        if m % cfg.record_every == 0:
            record(z)
    arr = lambda k: np.array(rec[k], dtype=float)
    return Trajectory(
        times=arr("t"),
        energies=arr("E"),
        controls_f=arr("f"),
        controls_g=arr("g"),
        x0_norms=arr("x0"),
        target_norms=arr("tn") if kp is not None else None,
        snapshots=rec["snap"] if cfg.snapshots else None,
        failure=failure,
    )

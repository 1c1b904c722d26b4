"""Energy, decay fits, target-system residuals and the stability constants."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import DomainError, Grid1D, d1_matrix, d3_matrix, trapezoid_weights, x0_norm
from .kernel import KernelPair
from .sim import Trajectory, nonlinear_term
from .transform import InverseOperators, StatePair, forward_transform

POWER_TOL = 1e-6
POWER_MAXITER = 500


@dataclass(frozen=True)
class DecayFit:
    """``||z(t)|| ~ C_fit * ||z(0)|| * exp(-sigma t)`` on ``window``."""

    sigma: float
    C_fit: float
    r_squared: float
    window: tuple[float, float]


@dataclass(frozen=True)
class StabilityConstants:
    K1: float
    K2: float
    K3: float
    C1: float


def energy(z: StatePair, g: Grid1D) -> float:
    """``E = 1/2 int eta^2 + w^2``."""
    nrm = x0_norm(z.eta, z.w, g)
    return 0.5 * nrm * nrm


def fit_series(times, values, window: Optional[tuple[float, float]] = None) -> DecayFit:
    """Least-squares fit of ``log values`` against ``t`` inside ``window``.

    ``C_fit`` is normalized by the first sample of the series.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.size == 0:
        raise DomainError("times and values must be non-empty and of equal length")
    lo, hi = window if window is not None else (t[0], t[-1])
    if not lo < hi:
        raise DomainError(f"empty window ({lo}, {hi})")
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 10:
        raise DomainError(f"need >= 10 samples in window, got {int(sel.sum())}")
    if not np.all(np.isfinite(y[sel])) or np.any(y[sel] <= 0):
        raise DomainError("decay fit needs finite, strictly positive samples")
    ts, ly = t[sel], np.log(y[sel])
    slope, icpt = np.polyfit(ts, ly, 1)
    ss_res = np.sum((ly - (slope * ts + icpt)) ** 2)
    ss_tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(
        sigma=float(-slope),
        C_fit=float(np.exp(icpt) / y[0]) if y[0] > 0 else float("nan"),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        window=(float(lo), float(hi)),
    )


def fit_decay_rate(traj: Trajectory, window=None, series: str = "x0") -> DecayFit:
    """Decay rate of ``x0_norms`` (``series="x0"``) or ``target_norms`` (``"target"``)."""
    if series == "x0":
        vals = traj.x0_norms
    elif series == "target":
        if traj.target_norms is None:
            raise DomainError("trajectory has no target norms (open loop)")
        vals = traj.target_norms
    else:
        raise DomainError(f"unknown series {series!r}")
    return fit_series(traj.times, vals, window)


def _same_grid(kp: KernelPair, g: Grid1D):
    if not kp.g.same_as(g):
        raise DomainError("kernel grid does not match state grid")


def target_sources(kp: KernelPair, z: StatePair, g: Grid1D) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic source terms ``(Psi, Phi)`` of the target system.

    ``Psi = -(eta w)_x - int k_y eta w dy - 1/2 int s_y w^2 dy`` and
    ``Phi = -w w_x - int s_y eta w dy - 1/2 int k_y w^2 dy``.
    """
    _same_grid(kp, g)
    if z.n != g.n:
        raise DomainError("state length does not match grid")
    wts = trapezoid_weights(g)
    ky, sy = kp.ky(), kp.sy()
    ew = wts * z.eta * z.w
    ww = wts * z.w * z.w
    psi1, phi1 = nonlinear_term(z.eta, z.w, g)
    psi = psi1 - ky @ ew - 0.5 * (sy @ ww)
    phi = phi1 - sy @ ew - 0.5 * (ky @ ww)
    return psi, phi


def target_residual(kp: KernelPair, traj: Trajectory, lam: float, nonlinear: bool = False) -> float:
    """Max residual of the target equations along recorded snapshots.

    Time derivatives use centered differences of consecutive snapshots, so the
    first and last snapshot only serve as neighbours.  The spatial and
    damping terms are evaluated at the ``(1/4, 1/2, 1/4)`` average of the same
    three snapshots: for a Crank-Nicolson trajectory this pairing is exact,
    so the residual measures how far the transform maps the discrete plant
    onto the target rather than the time-stepping error (undamped
    high-frequency Crank-Nicolson modes would otherwise dominate it).  Two
    nodes next to each end are excluded.  The quadratic sources are included
    when ``nonlinear``.
    """
    snaps = traj.snapshots
    if snaps is None or len(snaps) < 3:
        raise DomainError("target_residual needs at least 3 snapshots")
    g = kp.g
    D = (d1_matrix(g) + d3_matrix(g)).tocsr()
    tps = [forward_transform(kp, z) for z in snaps]
    t = np.array([z.t for z in snaps])
    avg = lambda a, b, c: 0.25 * a + 0.5 * b + 0.25 * c
    worst = 0.0
    for m in range(1, len(snaps) - 1):
        lo, mid, hi = tps[m - 1], tps[m], tps[m + 1]
        span = t[m + 1] - t[m - 1]
        ut = (hi.u - lo.u) / span
        vt = (hi.v - lo.v) / span
        u, v = avg(lo.u, mid.u, hi.u), avg(lo.v, mid.v, hi.v)
        ru = ut + D @ v + lam * u
        rv = vt + D @ u + lam * v
        if nonlinear:
            psi, phi = target_sources(kp, snaps[m], g)
            ru -= psi
            rv -= phi
        worst = max(worst, float(np.abs(ru[2:-2]).max()), float(np.abs(rv[2:-2]).max()))
    return worst


def _inverse_norm(solve, solve_T, n: int, rng: np.random.Generator) -> float:
    """2-norm of ``A^{-1}`` by power iteration on ``A^{-T} A^{-1}``."""
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(POWER_MAXITER):
        y = solve_T(solve(x))
        new = np.sqrt(np.linalg.norm(y))
        x = y / np.linalg.norm(y)
        if abs(new - est) <= POWER_TOL * new:
            return float(new)
        est = new
    return float(est)


def stability_constants(kp: KernelPair, inv: InverseOperators, g: Grid1D, seed: int = 0) -> StabilityConstants:
    """Discrete ``K1, K2, K3`` and ``C1``.

    Slice norms are weighted L^2 norms; ``||k||`` and ``||s||`` are weighted
    Frobenius norms over the square.  ``C1 = (||A+^{-1}||^2 + ||A-^{-1}||^2)/2``
    in the operator norm induced by the trapezoid inner product.
    """
    _same_grid(kp, g)
    wts = trapezoid_weights(g)
    slice_norm = lambda F: np.sqrt(F**2 @ wts)  # L^2 in y of each x-slice
    col_norm = lambda F: np.sqrt(wts @ F**2)  # L^2 in x of each y-slice
    sq_norm = lambda F: float(np.sqrt(wts @ F**2 @ wts))
    kx, sx, ky, sy = kp.kx(), kp.sx(), kp.ky(), kp.sy()
    K1 = float(slice_norm(kx).max() + slice_norm(sx).max())
    scale = 1.0 + sq_norm(kp.k_vals) + sq_norm(kp.s_vals)
    K2 = float(col_norm(ky).max() * scale)
    K3 = float(0.5 * col_norm(sy).max() * scale)

    # the trapezoid inner product turns A into W^{1/2} A W^{-1/2}
    r = np.sqrt(wts)
    rng = np.random.default_rng(seed)
    norms = []
    for solve, solve_T in ((inv.solve_plus, inv.solve_plus_T), (inv.solve_minus, inv.solve_minus_T)):
        fwd = lambda x, s=solve: r * s(x / r)
        adj = lambda x, s=solve_T: s(x * r) / r  # transpose of W^{1/2} A^{-1} W^{-1/2}
        norms.append(_inverse_norm(fwd, adj, g.n, rng))
    C1 = 0.5 * (norms[0] ** 2 + norms[1] ** 2)
    return StabilityConstants(K1, K2, K3, float(C1))

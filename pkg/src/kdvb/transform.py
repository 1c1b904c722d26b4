"""Integral operators ``K``, ``S``, the state transformation and the feedback laws.

With quadrature matrices ``K_h = k * w`` and ``S_h = s * w`` (``w`` the
trapezoid weights, broadcast over columns) the transformation reads

    u = (I - K_h) eta - S_h w
    v = (I - K_h) w   - S_h eta

and is inverted through the sum and difference variables
``u + v = (I - (K_h + S_h))(eta + w)`` and ``u - v = (I - (K_h - S_h))(eta - w)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .grid import DomainError, Grid1D, trapezoid_weights
from .kernel import KernelPair


class TransformError(RuntimeError):
    """The discrete transformation could not be inverted."""


@dataclass(frozen=True, eq=False)
class StatePair:
    """Plant state ``(eta, w)`` at time ``t``."""

    eta: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if eta.ndim != 1 or eta.shape != w.shape:
            raise DomainError(f"eta and w must be 1-d of equal length, got {eta.shape}, {w.shape}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "t", float(self.t))

    @property
    def n(self) -> int:
        return self.eta.size

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.eta, self.w])


@dataclass(frozen=True, eq=False)
class TargetPair:
    """Transformed state ``(u, v)`` at time ``t``."""

    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if u.ndim != 1 or u.shape != v.shape:
            raise DomainError(f"u and v must be 1-d of equal length, got {u.shape}, {v.shape}")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "t", float(self.t))


@dataclass(frozen=True, eq=False)
class InverseOperators:
    """LU factors of ``I - (K_h + S_h)`` and ``I - (K_h - S_h)``.

    ``cond_plus`` and ``cond_minus`` are 1-norm condition estimates.
    """

    grid: Grid1D
    factor_plus: tuple
    factor_minus: tuple
    cond_plus: float
    cond_minus: float

    def solve_plus(self, b: np.ndarray) -> np.ndarray:
        return la.lu_solve(self.factor_plus, b)

    def solve_minus(self, b: np.ndarray) -> np.ndarray:
        return la.lu_solve(self.factor_minus, b)

    def solve_plus_T(self, b: np.ndarray) -> np.ndarray:
        return la.lu_solve(self.factor_plus, b, trans=1)

    def solve_minus_T(self, b: np.ndarray) -> np.ndarray:
        return la.lu_solve(self.factor_minus, b, trans=1)


def quadrature_matrices(kp: KernelPair) -> tuple[np.ndarray, np.ndarray]:
    """``(K_h, S_h)`` with ``K_h[i, j] = w_j * k(x_i, y_j)``."""
    wts = trapezoid_weights(kp.g)
    return kp.k_vals * wts, kp.s_vals * wts


def _vec(kp: KernelPair, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (kp.n,):
        raise DomainError(f"expected vector of length {kp.n}, got shape {v.shape}")
    return v


def _check_state(kp: KernelPair, z: StatePair):
    if z.n != kp.n:
        raise DomainError(f"state has {z.n} nodes but kernels live on {kp.n}")


def apply_K(kp: KernelPair, v) -> np.ndarray:
    """``(K v)(x_i) = sum_j w_j k(x_i, y_j) v_j``."""
    v = _vec(kp, v)
    return kp.k_vals @ (trapezoid_weights(kp.g) * v)


def apply_S(kp: KernelPair, v) -> np.ndarray:
    v = _vec(kp, v)
    return kp.s_vals @ (trapezoid_weights(kp.g) * v)


def forward_transform(kp: KernelPair, z: StatePair) -> TargetPair:
    _check_state(kp, z)
    Ke, Kw = apply_K(kp, z.eta), apply_K(kp, z.w)
    Se, Sw = apply_S(kp, z.eta), apply_S(kp, z.w)
    return TargetPair(z.eta - Ke - Sw, z.w - Kw - Se, z.t)


def build_inverse_operators(kp: KernelPair) -> InverseOperators:
    """Dense LU of both sum/difference operators.

    Raises
    ------
    TransformError
        If either matrix is singular to working precision.
    """
    Kh, Sh = quadrature_matrices(kp)
    eye = np.eye(kp.n)
    factors, conds = [], []
    for A in (eye - (Kh + Sh), eye - (Kh - Sh)):
        if not np.all(np.isfinite(A)):
            raise TransformError("discrete transform not invertible (non-finite kernel)")
        lu, piv = la.lu_factor(A, check_finite=False)
        if np.min(np.abs(np.diag(lu))) <= np.finfo(float).eps * np.abs(A).max() * kp.n:
            raise TransformError("discrete transform not invertible")
        inv_norm = np.abs(la.lu_solve((lu, piv), eye)).sum(axis=0).max()
        cond = float(np.abs(A).sum(axis=0).max() * inv_norm)
        if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
            raise TransformError(f"discrete transform not invertible (condition {cond:.2e})")
        factors.append((lu, piv))
        conds.append(cond)
    return InverseOperators(kp.g, factors[0], factors[1], conds[0], conds[1])


def inverse_transform(inv: InverseOperators, tp: TargetPair) -> StatePair:
    if tp.u.size != inv.grid.n:
        raise DomainError(f"target has {tp.u.size} nodes but operators act on {inv.grid.n}")
    p = inv.solve_plus(tp.u + tp.v)
    m = inv.solve_minus(tp.u - tp.v)
    return StatePair(0.5 * (p + m), 0.5 * (p - m), tp.t)


def feedback_f(kp: KernelPair, z: StatePair) -> float:
    """Neumann input ``eta_x(0) = int k_x(0,y) eta + s_x(0,y) w dy``."""
    _check_state(kp, z)
    wts = trapezoid_weights(kp.g)
    return float(wts @ (kp.trace_kx0 * z.eta + kp.trace_sx0 * z.w))


def feedback_g(kp: KernelPair, z: StatePair) -> float:
    """Neumann input ``w_x(L) = int k_x(L,y) w + s_x(L,y) eta dy``."""
    _check_state(kp, z)
    wts = trapezoid_weights(kp.g)
    return float(wts @ (kp.trace_kxL * z.w + kp.trace_sxL * z.eta))


def feedback_rows(kp: KernelPair) -> tuple[np.ndarray, np.ndarray]:
    """Row vectors ``a, b`` with ``f = a @ [eta; w]`` and ``g = b @ [eta; w]``."""
    wts = trapezoid_weights(kp.g)
    a = np.concatenate([wts * kp.trace_kx0, wts * kp.trace_sx0])
    b = np.concatenate([wts * kp.trace_sxL, wts * kp.trace_kxL])
    return a, b

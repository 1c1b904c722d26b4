"""Critical lengths ``2*pi/sqrt(3) * sqrt(k^2 + k*l + l^2)`` for ``k, l >= 1``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DomainError

PREFACTOR = 2.0 * math.pi / math.sqrt(3.0)


@dataclass(frozen=True)
class CriticalQuery:
    k_max: int = 1
    l_max: int = 1
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.k_max < 1 or self.l_max < 1:
            raise DomainError("k_max and l_max must be >= 1")
        if not 0 < self.tolerance < 1:
            raise DomainError(f"tolerance must lie in (0, 1), got {self.tolerance}")


def critical_length(k: int, l: int) -> float:
    return PREFACTOR * math.sqrt(k * k + k * l + l * l)


def critical_lengths(q: CriticalQuery) -> list[float]:
    vals = sorted(
        critical_length(k, l) for k in range(1, q.k_max + 1) for l in range(1, q.l_max + 1)
    )
    out: list[float] = []
    for v in vals:
        if not out or v - out[-1] > 1e-12:
            out.append(v)
    return out


def _covering_query(L: float, q: CriticalQuery) -> CriticalQuery:
    # k^2+kl+l^2 > k^2 so every index beyond this bound yields a length above L + tol
    bound = max(q.k_max, q.l_max, int(math.ceil((L + 1.0) / PREFACTOR)) + 1)
    return CriticalQuery(bound, bound, q.tolerance)


def nearest_critical(L: float, count: int = 3, q: CriticalQuery | None = None) -> list[float]:
    q = q or CriticalQuery()
    cq = _covering_query(L, q)
    # make sure at least `count` values exist beyond L as well
    while len([v for v in critical_lengths(cq) if v > L]) < count:
        cq = CriticalQuery(cq.k_max + 1, cq.l_max + 1, cq.tolerance)
    vals = np.array(critical_lengths(cq))
    order = np.argsort(np.abs(vals - L), kind="stable")
    return [float(v) for v in vals[order[:count]]]


def is_critical(L: float, q: CriticalQuery | None = None) -> bool:
    """True iff ``L`` lies within ``q.tolerance`` of a critical length."""
    if not L > 0:
        raise DomainError(f"L must be positive, got {L}")
    q = q or CriticalQuery()
    vals = np.array(critical_lengths(_covering_query(L, q)))
    return bool(np.abs(vals - L).min() < q.tolerance)

"""Projection of search directions onto the cone of feasible directions.

At a density field ``x`` with bounds ``[x_min, x_max]`` and a fixed total
volume, a direction ``d`` is feasible when

* ``d_i >= 0`` wherever ``x_i == x_min``,
* ``d_i <= 0`` wherever ``x_i == x_max``,
* ``sum(d) == 0``.

Treating a subset of the bound constraints as equalities (the *active set*)
together with the volume row, the orthogonal projection onto the null space
of those rows zeroes the active components and removes the mean from the
free ones. :func:`build_M1` constructs the explicit orthonormal null-space
basis for the free block; :func:`project_active` is the O(n) closed form
that equals ``d @ M @ M.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StationaryPoint(Exception):
    """No nonzero feasible direction remains (the iterate is stationary)."""


@dataclass(frozen=True)
class ActiveSet:
    """Bound constraints treated as equalities; the volume row is implicit."""

    n: int
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.unique(np.asarray(self.lower, dtype=np.intp))
        upper = np.unique(np.asarray(self.upper, dtype=np.intp))
        if len(np.intersect1d(lower, upper)):
            raise ValueError("an index cannot be active at both bounds")
        for idx in (lower, upper):
            if len(idx) and (idx[0] < 0 or idx[-1] >= self.n):
                raise ValueError("active index out of range")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def empty(cls, n):
        return cls(n, np.empty(0, np.intp), np.empty(0, np.intp))

    @property
    def size(self) -> int:
        return len(self.lower) + len(self.upper)

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.lower] = False
        mask[self.upper] = False
        return mask

    @property
    def n_free(self) -> int:
        return self.n - self.size

    def constraint_matrix(self) -> np.ndarray:
        """Dense rows: the all-ones volume row, then one unit row per active bound."""
        rows = [np.ones(self.n)]
        for i in np.concatenate([self.lower, self.upper]):
            e = np.zeros(self.n)
            e[i] = 1.0
            rows.append(e)
        return np.array(rows)

    def without(self, index) -> "ActiveSet":
        return ActiveSet(self.n, self.lower[self.lower != index], self.upper[self.upper != index])


@dataclass(frozen=True)
class SearchDirection:
    d: np.ndarray
    feasible: bool
    expansions: int
    stationary: bool = False


def build_M1(n1: int) -> np.ndarray:
    """Explicit ``n1 x (n1 - 1)`` orthonormal basis of the vectors orthogonal
    to ``ones(n1)``.

    The first row is ``-1/sqrt(n1)``; below it sits ``I + s`` with
    ``s = (-1 + 1/sqrt(n1)) / (n1 - 1)``.
    """
    n1 = int(n1)
    if n1 < 2:
        raise ValueError(f"need at least two free variables, got {n1}")
    m = -1.0 / np.sqrt(n1)
    s = (-1.0 + 1.0 / np.sqrt(n1)) / (n1 - 1)
    M1 = np.empty((n1, n1 - 1))
    M1[0, :] = m
    M1[1:, :] = s + np.eye(n1 - 1)
    return M1


def project_dense(d, active: ActiveSet) -> np.ndarray:
    """``d M M^T`` with ``M = [M1; 0]`` built explicitly (O(n1^2) memory)."""
    d = np.asarray(d, dtype=float)
    free = np.flatnonzero(active.free_mask())
    out = np.zeros_like(d)
    if len(free) < 2:
        return out
    M1 = build_M1(len(free))
    out[free] = (d[free] @ M1) @ M1.T
    return out


def project_active(d, active: ActiveSet) -> np.ndarray:
    """Orthogonal projection onto the null space of the active rows, in O(n).

    Active components become zero; free components lose their mean.
    """
    d = np.asarray(d, dtype=float)
    if d.shape != (active.n,):
        raise ValueError(f"direction has shape {d.shape}, expected ({active.n},)")
    free = active.free_mask()
    if not free.any():
        raise ValueError("projection needs at least one free variable")
    out = np.zeros_like(d)
    df = d[free]
    out[free] = df - df.mean()
    return out


def _violations(p, at_lower, at_upper, tol):
    return (at_lower & (p < -tol)), (at_upper & (p > tol))


def expand_active_set(d, x, x_min: float = 0.0, x_max: float = 1.0, max_passes=None):
    """Grow the active set until the projected direction is feasible.

    Starting from the volume row alone, every bound constraint violated by
    the current projection is added and the projection recomputed. Returns
    ``(ActiveSet, SearchDirection)``; a direction that collapses to zero
    is flagged ``stationary``.
    """
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float)
    n = len(d)
    if x.shape != d.shape:
        raise ValueError("direction and density shapes differ")
    at_lower = x == x_min
    at_upper = x == x_max
    tol = 1e-12 * max(1.0, float(np.abs(d).max(initial=0.0)))
    lower = np.zeros(n, dtype=bool)
    upper = np.zeros(n, dtype=bool)
    passes = 0
    limit = n if max_passes is None else max_passes
    while True:
        passes += 1
        free = ~(lower | upper)
        p = np.zeros(n)
        if free.sum() >= 2:
            df = d[free]
            p[free] = df - df.mean()
        low_bad, up_bad = _violations(p, at_lower, at_upper, tol)
        if not (low_bad.any() or up_bad.any()) or passes > limit:
            break
        lower |= low_bad
        upper |= up_bad
    active = ActiveSet(n, np.flatnonzero(lower), np.flatnonzero(upper))
    feasible = not (low_bad.any() or up_bad.any())
    # sub-tolerance outward motion at a bound would give a zero step
    p[at_lower & (p < 0)] = 0.0
    p[at_upper & (p > 0)] = 0.0
    stationary = not np.any(np.abs(p) > tol)
    if stationary:
        p = np.zeros(n)
    return active, SearchDirection(p, feasible, passes - 1, stationary)


def exact_cone_projection(d, x, x_min: float = 0.0, x_max: float = 1.0) -> np.ndarray:
    """Exact Euclidean projection onto the feasible-direction cone.

    The KKT conditions give ``p_i = d_i - mu`` on interior components,
    ``max(d_i - mu, 0)`` at the lower bound and ``min(d_i - mu, 0)`` at the
    upper bound, with the scalar ``mu`` fixed by ``sum(p) == 0``; ``sum(p)``
    is monotone in ``mu`` so a bracketing root search finds it.
    """
    from scipy.optimize import brentq

    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float)
    at_lower = x == x_min
    at_upper = x == x_max

    def shifted(mu):
        p = d - mu
        p[at_lower] = np.maximum(p[at_lower], 0.0)
        p[at_upper] = np.minimum(p[at_upper], 0.0)
        return p

    lo, hi = d.min() - 1.0, d.max() + 1.0
    if shifted(lo).sum() <= 0 or shifted(hi).sum() >= 0:
        # every component is pinned at a bound in one direction
        return np.zeros_like(d)
    mu = brentq(lambda m: shifted(m).sum(), lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return shifted(mu)


def redundancy_fraction(d, active: ActiveSet, x=None, x_min=0.0, x_max=1.0) -> float:
    """Share of active bound constraints that are not binding.

    A constraint counts as redundant when re-projecting the original
    direction without it still satisfies that constraint, i.e. dropping it
    would not have been needed for feasibility.
    """
    if active.size == 0:
        return 0.0
    d = np.asarray(d, dtype=float)
    tol = 1e-12 * max(1.0, float(np.abs(d).max(initial=0.0)))
    redundant = 0
    for i in active.lower:
        p = project_active(d, active.without(i))
        redundant += p[i] >= -tol
    for i in active.upper:
        p = project_active(d, active.without(i))
        redundant += p[i] <= tol
    return redundant / active.size


def max_step(x, d, x_min: float = 0.0, x_max: float = 1.0) -> float:
    """Largest ``alpha`` keeping ``x + alpha d`` inside the bounds."""
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    up = d > 0
    down = d < 0
    if not (up.any() or down.any()):
        raise StationaryPoint("zero direction has no step")
    ratios = np.concatenate([(x_max - x[up]) / d[up], (x[down] - x_min) / (-d[down])])
    alpha = float(ratios.min())
    if not np.isfinite(alpha):
        raise RuntimeError("unbounded step for a nonzero direction")
    return alpha

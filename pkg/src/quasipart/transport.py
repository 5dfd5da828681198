"""Grid discretization of the risk functional and a linear-programming oracle.

On a grid ``x_r`` with cell volumes ``D_r`` the risk of a rule becomes

    Z_D = sum_r sum_j phi_j(x_r) g_j(x_r) D_r

minimized over ``phi_j(x_r) >= 0`` with ``sum_j phi_j(x_r) = 1`` at every
point.  :func:`solve_assignment_lp` treats this as a general LP and solves it
with a dense two-phase simplex method; :func:`integer_assignment` takes the
pointwise argmin.  Agreement of the two certifies the argmin rule on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .decision import HypothesisFamily, WeightMatrix, cost_table


class LPError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid:
    points: np.ndarray
    cell_weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.cell_weights, dtype=float).ravel()
        if pts.shape[0] == 0 or pts.shape[0] != w.shape[0]:
            raise ValueError("grid needs at least one point and one weight per point")
        if not np.all(np.isfinite(pts)) or not np.all(w > 0.0):
            raise ValueError("grid points must be finite and cell weights positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cell_weights", w)

    @property
    def size(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class DiscreteAssignment:
    """Per-point label probabilities ``phi[r, j]``."""

    phi: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.phi, axis=1)

    def is_feasible(self) -> bool:
        return bool(np.all(self.phi >= 0.0) and np.all(self.phi.sum(axis=1) == 1.0))


def default_bounds(family: HypothesisFamily, pad_sigmas: float = 8.0) -> list[tuple[float, float]]:
    """``[min center - pad*sigma_max, max center + pad*sigma_max]`` on every axis."""
    out = []
    for j in range(family.dim):
        laws = [c.components[j] for m in family.densities for c in m.components]
        centers = [law.a for law in laws]
        s = max(law.sigma for law in laws)
        out.append((min(centers) - pad_sigmas * s, max(centers) + pad_sigmas * s))
    return out


def discretize(weights: WeightMatrix, family: HypothesisFamily,
               bounds: Sequence[tuple[float, float]] | None = None,
               resolution: int | Sequence[int] = 200) -> tuple[Grid, np.ndarray]:
    """Uniform tensor grid over ``bounds`` and the cost table ``g_j(x_r)``.

    Every point carries the full cell volume (product of axis spacings).
    """
    d = family.dim
    if d > 3:
        raise ValueError(f"grid discretization supports d <= 3, got d={d}")
    if bounds is None:
        bounds = default_bounds(family)
    bounds = list(bounds)
    res = [resolution] * d if np.isscalar(resolution) else list(resolution)
    if len(bounds) != d or len(res) != d:
        raise ValueError(f"need bounds and resolution for each of {d} axes")
    for lo, hi in bounds:
        if not hi > lo:
            raise ValueError(f"empty bounds [{lo}, {hi}]")
    if any(int(r) < 2 for r in res):
        raise ValueError(f"resolution must be >= 2 per axis, got {res}")
    axes = [np.linspace(lo, hi, int(r)) for (lo, hi), r in zip(bounds, res)]
    cell = float(np.prod([(hi - lo) / (int(r) - 1) for (lo, hi), r in zip(bounds, res)]))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    grid = Grid(points, np.full(len(points), cell))
    return grid, cost_table(weights, family, points)


def discrete_objective(grid: Grid, costs: np.ndarray, assignment: DiscreteAssignment | np.ndarray) -> float:
    phi = assignment.phi if isinstance(assignment, DiscreteAssignment) else np.asarray(assignment)
    return float(np.sum(phi * costs * grid.cell_weights[:, None]))


def integer_assignment(grid: Grid, costs: np.ndarray) -> DiscreteAssignment:
    """0/1 assignment to the cheapest label at each point (lowest label on ties)."""
    costs = np.asarray(costs, dtype=float)
    phi = np.zeros_like(costs)
    phi[np.arange(grid.size), np.argmin(costs, axis=1)] = 1.0
    return DiscreteAssignment(phi)


# ---------------------------------------------------------------------------
# dense simplex
# ---------------------------------------------------------------------------

_EPS = np.finfo(float).eps


def _fresh_reduced_costs(T, basis, c):
    """Reduced costs recomputed from the constraint rows, with a rounding bound."""
    cB = c[basis]
    body = T[:-1, :-1]
    d = c - cB @ body
    tol = 64.0 * _EPS * (np.abs(c) + np.abs(cB) @ np.abs(body))
    return d, tol


def _leaving(T, basis, col, piv_tol=1e-11):
    colv = T[:-1, col]
    rows = np.flatnonzero(colv > piv_tol)
    if rows.size == 0:
        return -1
    ratios = T[rows, -1] / colv[rows]
    best = ratios.min()
    ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
    # Bland: among tied rows, the one whose basic variable has the lowest index
    return int(ties[np.argmin(basis[ties])])


def _run(T, basis, c, allowed, max_iter):
    """Bland-rule iterations on tableau ``T`` whose last row holds reduced costs.

    The cost row is carried through the pivots; before declaring optimality it
    is recomputed from scratch so accumulated drift cannot stop the search early
    or late.
    """
    T[-1, :-1], _ = _fresh_reduced_costs(T, basis, c)
    scale = 64.0 * _EPS * max(1.0, float(np.abs(c).max(initial=0.0)))
    for _ in range(max_iter):
        cand = np.flatnonzero(allowed & (T[-1, :-1] < -scale))
        if cand.size == 0:
            d, tol = _fresh_reduced_costs(T, basis, c)
            T[-1, :-1] = d
            cand = np.flatnonzero(allowed & (d < -tol))
            if cand.size == 0:
                return
        col = int(cand[0])
        row = _leaving(T, basis, col)
        if row < 0:
            raise LPError("LP is unbounded")
        kernels.pivot(T, row, col)
        basis[row] = col
    raise LPError(f"simplex did not terminate within {max_iter} pivots")


def simplex(c, A_eq, b_eq, max_iter: int | None = None) -> tuple[np.ndarray, float]:
    """Minimize ``c @ x`` subject to ``A_eq @ x = b_eq``, ``x >= 0``.

    Two-phase tableau simplex with Bland's anti-cycling rule.  Returns the
    optimal vertex and objective value.
    """
    c = np.asarray(c, dtype=float)
    A = np.array(A_eq, dtype=float)
    b = np.array(b_eq, dtype=float)
    m, n = A.shape
    neg = b < 0.0
    A[neg] *= -1.0
    b[neg] *= -1.0
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n, n + m)
    max_iter = max_iter or 50 * (n + m)

    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    _run(T, basis, c1, np.ones(n + m, dtype=bool), max_iter)
    infeas = float(T[:m][basis >= n, -1].sum())
    if infeas > 1e-9 * max(1.0, float(np.abs(b).sum())):
        raise LPError(f"LP is infeasible (phase-one residual {infeas})")

    # drive zero-level artificials out of the basis; drop rows that are redundant
    keep = np.ones(m + 1, dtype=bool)
    for row in np.flatnonzero(basis >= n):
        cand = np.flatnonzero(np.abs(T[row, :n]) > 1e-11)
        if cand.size:
            kernels.pivot(T, row, int(cand[0]))
            basis[row] = cand[0]
        else:
            keep[row] = False
    basis = basis[keep[:m]]
    # artificial columns are never re-entered in phase two
    T = np.ascontiguousarray(np.concatenate([T[keep][:, :n], T[keep][:, -1:]], axis=1))

    _run(T, basis, c, np.ones(n, dtype=bool), max_iter)
    x = np.zeros(n)
    x[basis] = T[:-1, -1]
    return x, float(c @ x)


def solve_assignment_lp(grid: Grid, costs: np.ndarray) -> DiscreteAssignment:
    """Minimize the discretized risk as a general LP over all ``phi_j(x_r)``.

    The problem is handed to :func:`simplex` as one block of ``R * L``
    variables with ``R`` equality rows; no use is made of the fact that the
    rows decouple.
    """
    costs = np.asarray(costs, dtype=float)
    R, L = costs.shape
    if R != grid.size:
        raise ValueError(f"cost table has {R} rows, grid has {grid.size} points")
    c = (costs * grid.cell_weights[:, None]).ravel()
    A = np.zeros((R, R * L))
    for r in range(R):
        A[r, r * L:(r + 1) * L] = 1.0
    x, _ = simplex(c, A, np.ones(R))
    phi = x.reshape(R, L)
    # a vertex of this polytope is 0/1; clear pivoting residue
    phi = np.where(np.abs(phi) < 1e-9, 0.0, np.where(np.abs(phi - 1.0) < 1e-9, 1.0, phi))
    return DiscreteAssignment(phi)

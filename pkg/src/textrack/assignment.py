"""Rectangular Kuhn-Munkres assignment with post-hoc gating."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]
    unmatched_rows: tuple[int, ...] = field(default=())
    unmatched_cols: tuple[int, ...] = field(default=())

    def total_cost(self, cost: np.ndarray) -> float:
        return math.fsum(float(cost[i, j]) for i, j in self.pairs)


def _min_cost_rows_le_cols(cost: np.ndarray) -> np.ndarray:
    """Shortest augmenting path Hungarian for n <= m; returns column per row.

    Dual potentials ``u`` (rows) and ``v`` (columns) stay feasible; every
    row is inserted by growing an alternating tree from a virtual column 0.
    Ties are broken by the first minimal column in scan order.
    """
    n, m = cost.shape
    inf = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = row (1-based) holding column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            cur = cost[i0 - 1] - u[i0] - v[1:]
            cand = free[1:] & (cur < minv[1:])
            minv[1:][cand] = cur[cand]
            way[1:][cand] = j0
            masked = np.where(free[1:], minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if owner[j]:
            col_of_row[owner[j] - 1] = j - 1
    return col_of_row


def min_cost_matching(cost) -> list[tuple[int, int]]:
    """Pairs of a minimum-total-cost matching of size min(M, N)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix entries must be finite")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return []
    if rows <= cols:
        col_of_row = _min_cost_rows_le_cols(cost)
        return [(i, int(j)) for i, j in enumerate(col_of_row)]
    row_of_col = _min_cost_rows_le_cols(cost.T)
    return sorted((int(i), j) for j, i in enumerate(row_of_col))


def solve_assignment(cost, gate: float = math.inf) -> Assignment:
    """Hungarian matching, then drop every pair whose cost exceeds ``gate``."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        cost = cost.reshape(0, 0) if cost.size == 0 else cost
    if gate < 0:
        raise ValueError("gate must be non-negative")
    pairs = [(i, j) for i, j in min_cost_matching(cost) if cost[i, j] <= gate]
    rows, cols = cost.shape
    mr = {i for i, _ in pairs}
    mc = {j for _, j in pairs}
    return Assignment(
        pairs=tuple(pairs),
        unmatched_rows=tuple(i for i in range(rows) if i not in mr),
        unmatched_cols=tuple(j for j in range(cols) if j not in mc),
    )

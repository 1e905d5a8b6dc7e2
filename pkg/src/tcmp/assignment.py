"""Minimum-cost rectangular assignment (Kuhn-Munkres, shortest augmenting paths)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class Assignment:
    matches: list = field(default_factory=list)  # (row, col) pairs, sorted by row
    unmatched_rows: list = field(default_factory=list)
    unmatched_cols: list = field(default_factory=list)

    def cost(self, matrix) -> float:
        matrix = np.asarray(matrix, dtype=np.float64)
        return float(sum(matrix[r, c] for r, c in self.matches))


def _solve(cost: np.ndarray) -> np.ndarray:
    """Column index per row for an ``n x m`` matrix with ``n <= m``.

    Potentials-based O(n^2 m). Rows are inserted in order and the first
    column reaching the minimum reduced cost wins, so ties resolve toward
    lower indices.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) owning column j; 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    a = np.zeros((n + 1, m + 1))
    a[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0, :] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian(cost) -> Assignment:
    """Minimum-total-cost matching of ``min(R, C)`` pairs."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise InvalidInputError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("cost matrix must be finite")
    rows, cols = cost.shape
    if rows == 0 or cols == 0:
        return Assignment([], list(range(rows)), list(range(cols)))
    if rows <= cols:
        col_of_row = _solve(cost)
        matches = [(r, int(c)) for r, c in enumerate(col_of_row)]
    else:
        row_of_col = _solve(cost.T)
        matches = sorted((int(r), c) for c, r in enumerate(row_of_col))
    used_r = {r for r, _ in matches}
    used_c = {c for _, c in matches}
    return Assignment(
        matches,
        [r for r in range(rows) if r not in used_r],
        [c for c in range(cols) if c not in used_c],
    )

"""Optimal bipartite assignment with a rejection threshold.

Both tracking steps turn their correspondence probabilities into a matching
by solving a min-cost assignment on cost = 1 - probability. Rectangular
matrices are padded to square with dummy entries whose cost exceeds any real
cost, so the optimum always matches min(rows, cols) real pairs and maximizes
the summed probability over them. Matched pairs below the threshold are
rejected afterwards (post-assignment filtering), and ties between equal-total
optima are broken toward the lexicographically smallest assignment vector,
which makes the solver fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InternalError, InvalidInputError

# Real costs are 1 - p <= 1; any constant > 1 keeps dummy pads strictly worse.
_PAD_COST = 2.0
# Edges whose reduced cost is below this are treated as tight (usable by some
# optimal matching). Dual rounding is ~n * eps(1), far below this.
_TIGHT_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Rectangular matrix of correspondence probabilities in [0, 1]."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2:
            raise InvalidInputError(f"score matrix must be 2-D, got shape {arr.shape}")
        if arr.size:
            if np.isnan(arr).any():
                raise InvalidInputError("score matrix contains NaN")
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise InvalidInputError("score matrix entries must lie in [0, 1]")
        object.__setattr__(self, "probs", arr)

    @property
    def rows(self) -> int:
        return self.probs.shape[0]

    @property
    def cols(self) -> int:
        return self.probs.shape[1]


def _solve_square(cost: np.ndarray):
    """Min-cost perfect matching on a square matrix (Jonker-Volgenant style).

    Returns (col_of_row, u, v): the optimal assignment plus dual potentials
    satisfying u[i] + v[j] <= cost[i, j], tight on matched edges. Those duals
    certify optimality and let the caller enumerate all optimal-matching edges.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to col j
    way = np.zeros(n + 1, dtype=np.int64)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            if better.any():
                idx = np.flatnonzero(better) + 1
                minv[idx] = cur[idx - 1]
                way[idx] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            used_j = np.flatnonzero(used)
            u[p[used_j]] += delta
            v[used_j] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = np.empty(n, dtype=np.int64)
    col_of_row[p[1:] - 1] = np.arange(n)
    return col_of_row, u[1:], v[1:]


def _augment(start_row, freed_col_hint, banned_col, adj, row_of_col, col_of_row, fixed_col):
    """Kuhn augmenting search rerouting ``start_row`` onto some free column.

    Iterative (explicit stack) so deep alternating paths cannot overflow the
    interpreter stack. Commits the rewiring only on success.
    """
    visited = {banned_col}
    frames = [[start_row, iter(adj[start_row]), -1]]
    while frames:
        fr = frames[-1]
        advanced = False
        for c in fr[1]:
            if fixed_col[c] or c in visited:
                continue
            visited.add(c)
            fr[2] = c
            advanced = True
            occupant = row_of_col[c]
            if occupant == -1:
                for row_, _, col_ in frames:
                    row_of_col[col_] = row_
                    col_of_row[row_] = col_
                return True
            frames.append([occupant, iter(adj[occupant]), -1])
            break
        if not advanced:
            frames.pop()
    return False


def _lex_smallest(adj, init_col_of_row):
    """Lexicographically smallest perfect matching within the tight graph.

    Rows are fixed in ascending order, each onto its smallest feasible
    column (adjacency lists are ascending; dummy columns carry the largest
    indices and therefore rank last). Feasibility of a candidate column is
    checked by rerouting its current occupant through an augmenting path.
    """
    n = len(adj)
    col_of_row = [int(c) for c in init_col_of_row]
    row_of_col = [-1] * n
    for r, c in enumerate(col_of_row):
        row_of_col[c] = r
    fixed_col = [False] * n
    result = [-1] * n

    for r in range(n):
        chosen = -1
        for c in adj[r]:
            if fixed_col[c]:
                continue
            if c == col_of_row[r]:
                chosen = c
                break
            occupant = row_of_col[c]
            old = col_of_row[r]
            row_of_col[old] = -1
            if _augment(occupant, old, c, adj, row_of_col, col_of_row, fixed_col):
                row_of_col[c] = r
                col_of_row[r] = c
                chosen = c
                break
            row_of_col[old] = r
        if chosen == -1:
            raise InternalError("tight graph admits no perfect matching")
        fixed_col[chosen] = True
        result[r] = chosen
    return result


def solve_assignment(matrix, threshold: float) -> list[tuple[int, int]]:
    """Best one-to-one matching of rows to columns, thresholded.

    Returns (row, col) pairs sorted by row. The matching maximizes the summed
    probability over min(rows, cols) pairs; any matched pair with probability
    below ``threshold`` is dropped from the result afterwards.
    """
    if isinstance(matrix, ScoreMatrix):
        probs = matrix.probs
    else:
        probs = ScoreMatrix(np.asarray(matrix, dtype=np.float64)).probs
    if not (0.0 <= float(threshold) <= 1.0):
        raise InvalidInputError(f"threshold {threshold!r} outside [0, 1]")
    n_rows, n_cols = probs.shape
    if n_rows == 0 or n_cols == 0:
        return []

    n = max(n_rows, n_cols)
    cost = np.full((n, n), _PAD_COST)
    cost[:n_rows, :n_cols] = 1.0 - probs

    col_of_row, u, v = _solve_square(cost)
    tight = (cost - u[:, None] - v[None, :]) <= _TIGHT_EPS
    adj = [np.flatnonzero(tight[r]).tolist() for r in range(n)]
    assignment = _lex_smallest(adj, col_of_row)

    pairs = [
        (r, assignment[r])
        for r in range(n_rows)
        if assignment[r] < n_cols and probs[r, assignment[r]] >= threshold
    ]
    pairs.sort()
    return pairs


def matching_total(probs: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    """Summed probability of a matching; convenience for tests and reports."""
    return float(sum(probs[r, c] for r, c in pairs))

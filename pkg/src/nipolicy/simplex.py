"""Dense revised-simplex solver for desk-scale linear programs.

Solves  maximize c @ x  subject to row constraints with senses <=, >=, =
and x >= 0.  Two phases: phase 1 drives artificial variables out of the
basis (rows that turn out to be linearly dependent keep their artificial
pinned at zero and are effectively ignored), phase 2 optimizes the true
objective.  The basis inverse is maintained explicitly and updated after
every pivot, with periodic refactorization for numerical hygiene.

Entering-variable selection uses Dantzig's rule until a run of degenerate
pivots trips Bland's anti-cycling rule; the ratio test breaks ties by
preferring artificial variables and then the lowest basis index, which is
the Bland-consistent choice.  ``pivot_rule="bland"`` forces Bland's rule
throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_ITERATION_LIMIT = "iteration_limit"

SENSES = ("<=", ">=", "=")

_REFACTOR_EVERY = 200
_DEGENERATE_STREAK_FOR_BLAND = 40


@dataclass
class LinearProgram:
    """maximize objective @ x subject to triplet-form rows and x >= 0."""

    n_vars: int
    objective: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    senses: tuple[str, ...]
    rhs: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.senses)

    def dense_matrix(self) -> np.ndarray:
        a = np.zeros((self.n_rows, self.n_vars))
        np.add.at(a, (self.row_idx, self.col_idx), self.values)
        return a


def make_lp(objective, triplets, senses, rhs) -> LinearProgram:
    """Assemble a LinearProgram from (row, col, value) triplets."""
    objective = np.asarray(objective, dtype=np.float64)
    rows, cols, vals = (np.asarray(t) for t in zip(*triplets)) if triplets else (
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.float64),
    )
    senses = tuple(senses)
    rhs = np.asarray(rhs, dtype=np.float64)
    for sense in senses:
        if sense not in SENSES:
            raise DataError(f"unknown row sense {sense!r}")
    if len(senses) != rhs.size:
        raise DataError("senses and rhs lengths differ")
    return LinearProgram(
        n_vars=objective.size,
        objective=objective,
        row_idx=rows.astype(np.int64),
        col_idx=cols.astype(np.int64),
        values=vals.astype(np.float64),
        senses=senses,
        rhs=rhs,
    )


@dataclass
class SimplexResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int


class _Basis:
    """Basis bookkeeping: indices, explicit inverse, basic solution."""

    def __init__(self, a_ext: np.ndarray, rhs: np.ndarray, basis: np.ndarray):
        self.a = a_ext
        self.rhs = rhs
        self.basis = basis
        self.refactor()

    def refactor(self) -> None:
        b_mat = self.a[:, self.basis]
        try:
            self.binv = np.linalg.inv(b_mat)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular basis during refactorization") from exc
        self.xb = self.binv @ self.rhs

    def pivot(self, row: int, col: int, direction: np.ndarray, theta: float) -> None:
        self.xb -= theta * direction
        self.xb[row] = theta
        piv = direction[row]
        self.binv[row] /= piv
        others = np.arange(self.binv.shape[0]) != row
        self.binv[others] -= np.outer(direction[others], self.binv[row])
        self.basis[row] = col


def _run_simplex(
    bs: _Basis,
    cost: np.ndarray,
    allowed: np.ndarray,
    artificial_mask: np.ndarray,
    tol: float,
    max_iter: int,
    pivot_rule: str,
) -> tuple[str, int]:
    """Iterate to optimality of `cost` (maximization). Returns (status, iters)."""
    m = bs.binv.shape[0]
    use_bland = pivot_rule == "bland"
    degenerate_streak = 0
    iters = 0
    while iters < max_iter:
        iters += 1
        if iters % _REFACTOR_EVERY == 0:
            bs.refactor()

        y = cost[bs.basis] @ bs.binv
        reduced = cost - y @ bs.a
        reduced[~allowed] = -np.inf
        reduced[bs.basis] = -np.inf

        if use_bland:
            candidates = np.flatnonzero(reduced > tol)
            if candidates.size == 0:
                return STATUS_OPTIMAL, iters
            enter = int(candidates[0])
        else:
            enter = int(np.argmax(reduced))
            if reduced[enter] <= tol:
                return STATUS_OPTIMAL, iters

        direction = bs.binv @ bs.a[:, enter]
        positive = direction > 1e-10
        if not np.any(positive):
            return STATUS_UNBOUNDED, iters

        ratios = np.full(m, np.inf)
        ratios[positive] = np.maximum(bs.xb[positive], 0.0) / direction[positive]
        theta = ratios.min()
        ties = np.flatnonzero(ratios <= theta + 1e-12)
        # Prefer kicking artificials out, then lowest basis index (Bland-consistent).
        tie_art = ties[artificial_mask[bs.basis[ties]]]
        pool = tie_art if tie_art.size else ties
        leave = int(pool[np.argmin(bs.basis[pool])])

        if theta <= 1e-12:
            degenerate_streak += 1
            if pivot_rule == "auto" and degenerate_streak > _DEGENERATE_STREAK_FOR_BLAND:
                use_bland = True
        else:
            degenerate_streak = 0
            if pivot_rule == "auto":
                use_bland = False

        bs.pivot(leave, enter, direction, theta)
    return STATUS_ITERATION_LIMIT, iters


def solve_lp(
    lp: LinearProgram,
    tol: float = 1e-9,
    max_iter: int | None = None,
    pivot_rule: str = "auto",
) -> SimplexResult:
    """Solve the LP; returns a basic optimal solution when one exists.

    max_iter defaults to 50 * (rows + columns) across both phases.
    pivot_rule is "auto" (Dantzig with a Bland fallback on degeneracy) or
    "bland".
    """
    if pivot_rule not in ("auto", "bland"):
        raise DataError(f"unknown pivot rule {pivot_rule!r}")
    m, n = lp.n_rows, lp.n_vars
    if max_iter is None:
        max_iter = 50 * (m + n)

    a = lp.dense_matrix()
    rhs = lp.rhs.copy()
    senses = list(lp.senses)
    flip = rhs < 0.0
    a[flip] *= -1.0
    rhs[flip] *= -1.0
    for i in np.flatnonzero(flip):
        if senses[i] == "<=":
            senses[i] = ">="
        elif senses[i] == ">=":
            senses[i] = "<="

    # Column layout: [original | slack/surplus | artificial].
    slack_cols = []
    needs_artificial = []
    for i, sense in enumerate(senses):
        if sense == "<=":
            slack_cols.append((i, 1.0))
            needs_artificial.append(False)
        elif sense == ">=":
            slack_cols.append((i, -1.0))
            needs_artificial.append(True)
        else:
            needs_artificial.append(True)

    n_slack = len(slack_cols)
    art_rows = np.flatnonzero(needs_artificial)
    n_art = art_rows.size
    n_total = n + n_slack + n_art

    a_ext = np.zeros((m, n_total))
    a_ext[:, :n] = a
    for j, (i, sign) in enumerate(slack_cols):
        a_ext[i, n + j] = sign
    for j, i in enumerate(art_rows):
        a_ext[i, n + n_slack + j] = 1.0

    artificial_mask = np.zeros(n_total, dtype=bool)
    artificial_mask[n + n_slack :] = True

    basis = np.empty(m, dtype=np.int64)
    slack_of_row = {i: n + j for j, (i, sign) in enumerate(slack_cols) if sign > 0}
    art_of_row = {int(i): n + n_slack + j for j, i in enumerate(art_rows)}
    for i in range(m):
        basis[i] = slack_of_row.get(i, art_of_row.get(i, -1))
        if basis[i] < 0:
            raise NumericalError(f"no initial basic column for row {i}")

    bs = _Basis(a_ext, rhs, basis)
    total_iters = 0

    if n_art:
        cost1 = np.zeros(n_total)
        cost1[artificial_mask] = -1.0
        allowed = np.ones(n_total, dtype=bool)
        status, iters = _run_simplex(
            bs, cost1, allowed, artificial_mask, tol, max_iter, pivot_rule
        )
        total_iters += iters
        if status == STATUS_ITERATION_LIMIT:
            return SimplexResult(STATUS_ITERATION_LIMIT, None, np.nan, total_iters)
        if status == STATUS_UNBOUNDED:
            raise NumericalError("phase-1 objective unbounded; solver invariant broken")
        infeas = float(cost1[bs.basis] @ bs.xb)
        scale = 1.0 + float(np.abs(rhs).sum())
        if infeas < -tol * scale * 10.0:
            return SimplexResult(STATUS_INFEASIBLE, None, np.nan, total_iters)
        _evict_artificials(bs, artificial_mask, n)
        total_iters += 0

    cost2 = np.zeros(n_total)
    cost2[:n] = lp.objective
    allowed = ~artificial_mask
    status, iters = _run_simplex(
        bs, cost2, allowed, artificial_mask, tol, max_iter - total_iters, pivot_rule
    )
    total_iters += iters
    if status != STATUS_OPTIMAL:
        return SimplexResult(status, None, np.nan, total_iters)

    x = np.zeros(n_total)
    x[bs.basis] = np.maximum(bs.xb, 0.0)
    x_orig = x[:n]
    return SimplexResult(STATUS_OPTIMAL, x_orig, float(lp.objective @ x_orig), total_iters)


def _evict_artificials(bs: _Basis, artificial_mask: np.ndarray, n_real_and_slack_end: int) -> None:
    """Pivot basic artificials (at level ~0) out wherever a real pivot exists.

    Rows whose artificial cannot be evicted are linearly dependent on the
    others; the artificial stays basic at zero and phase 2 never lets it
    enter again, so the row is inert.
    """
    for row in range(bs.basis.size):
        col = bs.basis[row]
        if not artificial_mask[col]:
            continue
        tableau_row = bs.binv[row] @ bs.a
        tableau_row[artificial_mask] = 0.0
        candidates = np.flatnonzero(np.abs(tableau_row) > 1e-7)
        candidates = candidates[candidates != col]
        if candidates.size == 0:
            continue
        enter = int(candidates[0])
        direction = bs.binv @ bs.a[:, enter]
        bs.pivot(row, enter, direction, theta=max(float(bs.xb[row] / direction[row]), 0.0))

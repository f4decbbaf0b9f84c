"""Differentiable budgeted assignment via entropy-regularized transport.

An index matrix scores every (arm, action) pair.  Two routes turn scores
into allocations:

* ``sinkhorn_forward`` solves the entropic transport problem with cost
  C = -index, unit row marginals (one unit of mass per arm) and column
  marginals equal to the per-action budgets.  Iterations run in the log
  domain so small regularization strengths do not underflow, and the
  recorded tape supports exact reverse-mode differentiation of the
  (possibly truncated) iteration sequence via ``sinkhorn_backward``.
* ``solve_knapsack_exact`` maximizes total index over the transportation
  polytope; the constraint matrix is totally unimodular, so the simplex
  vertex it returns is integral and encodes one action per arm.

``plan_to_actions`` converts a soft plan into a feasible action vector by
sampling with budget repair or by hard rounding through the exact solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .simplex import STATUS_OPTIMAL, make_lp, solve_lp

DEFAULT_MAX_ITER = 500
DEFAULT_TOL = 1e-6


def _logsumexp(arr: np.ndarray, axis: int) -> np.ndarray:
    """Shift-stabilized logsumexp; tolerates all-(-inf) slices.

    Local implementation: this sits on the innermost Sinkhorn loop where
    the generic scipy version's call overhead dominates the runtime.
    """
    peak = np.max(arr, axis=axis, keepdims=True)
    peak_safe = np.where(np.isfinite(peak), peak, 0.0)
    out = np.log(np.sum(np.exp(arr - peak_safe), axis=axis)) + np.squeeze(peak_safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(peak, axis=axis)), out, -np.inf)


@dataclass
class SinkhornTape:
    """Per-iteration log-domain potentials, enough to replay the recursion.

    f_hist[k] is the row potential entering column update k+1 (f_hist[0] is
    the zero start); g_hist[k] is the column potential that update produced.
    The final entries are the potentials that generated the plan.
    """

    index: np.ndarray
    budgets: np.ndarray
    epsilon: float
    f_hist: np.ndarray
    g_hist: np.ndarray


@dataclass
class TransportPlan:
    gamma: np.ndarray
    budgets: np.ndarray
    epsilon: float
    iterations: int
    converged: bool
    max_violation: float
    violation_history: np.ndarray
    tape: SinkhornTape | None = None


def _check_balanced(n_arms: int, budgets) -> np.ndarray:
    budgets = np.asarray(budgets, dtype=np.float64)
    if np.any(budgets < 0):
        raise DataError("budgets must be nonnegative")
    if abs(budgets.sum() - n_arms) > 1e-9:
        raise DataError(
            f"budgets sum to {budgets.sum():g} but there are {n_arms} arms; "
            "pad the passive budget so the totals match"
        )
    return budgets


def _log_plan(f: np.ndarray, g: np.ndarray, scaled_index: np.ndarray, epsilon: float) -> np.ndarray:
    return scaled_index + (f[:, None] + g[None, :]) / epsilon


def sinkhorn_forward(
    index: np.ndarray,
    budgets,
    epsilon: float,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    record_tape: bool = True,
) -> TransportPlan:
    """Entropic transport plan for cost -index with budget column marginals.

    One iteration is a column update (columns then match the budgets
    exactly) followed by a row update (rows then sum to 1 exactly), after
    which the column-marginal violation is measured; the loop stops when it
    drops below ``tol`` or after ``max_iter`` iterations, with ``converged``
    flagged accordingly.
    """
    index = np.asarray(index, dtype=np.float64)
    if index.ndim != 2:
        raise DataError(f"index must be a 2-d matrix, got shape {index.shape}")
    if not np.all(np.isfinite(index)):
        raise DataError("index contains NaN or Inf")
    n, _ = index.shape
    budgets = _check_balanced(n, budgets)
    if epsilon <= 0.0:
        raise DataError("epsilon must be positive")

    with np.errstate(divide="ignore"):
        log_b = np.where(budgets > 0.0, np.log(np.maximum(budgets, 1e-300)), -np.inf)

    scaled = index / epsilon
    f = np.zeros(n)
    g = np.zeros(budgets.size)
    f_hist = [f.copy()] if record_tape else None
    g_hist = [] if record_tape else None

    violations = []
    iterations = 0
    converged = False
    violation = np.inf
    for _ in range(max_iter):
        g = epsilon * (log_b - _logsumexp(scaled + f[:, None] / epsilon, axis=0))
        f = -epsilon * _logsumexp(scaled + g[None, :] / epsilon, axis=1)
        if record_tape:
            g_hist.append(g.copy())
            f_hist.append(f.copy())
        iterations += 1
        col_sums = np.exp(_log_plan(f, g, scaled, epsilon)).sum(axis=0)
        violation = float(np.abs(col_sums - budgets).max())
        violations.append(violation)
        if violation < tol:
            converged = True
            break

    gamma = np.exp(_log_plan(f, g, scaled, epsilon))
    tape = None
    if record_tape:
        tape = SinkhornTape(
            index=index.copy(),
            budgets=budgets.copy(),
            epsilon=epsilon,
            f_hist=np.asarray(f_hist),
            g_hist=np.asarray(g_hist),
        )
    return TransportPlan(
        gamma=gamma,
        budgets=budgets.copy(),
        epsilon=epsilon,
        iterations=iterations,
        converged=converged,
        max_violation=violation,
        violation_history=np.asarray(violations),
        tape=tape,
    )


def sinkhorn_backward(plan: TransportPlan, d_gamma: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the plan back to the index matrix.

    Reverse-mode sweep through the recorded iteration sequence.  Each row
    update differentiates through a row-softmax of the current potentials
    and each column update through a column-softmax of the previous ones;
    the result is exact for the truncated iteration count actually
    performed, converged or not.
    """
    if plan.tape is None:
        raise DataError("plan carries no tape; rerun sinkhorn_forward with record_tape=True")
    tape = plan.tape
    d_gamma = np.asarray(d_gamma, dtype=np.float64)
    if d_gamma.shape != tape.index.shape:
        raise DataError(f"gradient shape {d_gamma.shape} != index shape {tape.index.shape}")

    eps = tape.epsilon
    scaled = tape.index / eps
    zero_cols = tape.budgets <= 0.0
    k_iters = tape.g_hist.shape[0]

    # Output layer: gamma = exp(scaled + (f_K + g_K)/eps).
    weighted = d_gamma * plan.gamma / eps
    df = weighted.sum(axis=1)
    dg = weighted.sum(axis=0)
    d_index = weighted.copy()

    for k in range(k_iters - 1, -1, -1):
        f_prev = tape.f_hist[k]
        f_cur = tape.f_hist[k + 1]
        g_cur = tape.g_hist[k]

        # Row update f_k = -eps*LSE_a(scaled + g_k/eps); sigma is the
        # row-softmax, i.e. the plan right after this update (rows sum to 1).
        sigma = np.exp(_log_plan(f_cur, g_cur, scaled, eps))
        dg -= (df[:, None] * sigma).sum(axis=0)
        d_index -= df[:, None] * sigma
        # Column update g_k = eps*(log b - LSE_n(scaled + f_{k-1}/eps)); tau
        # is the column-softmax (the post-update plan with columns scaled
        # back to sum 1).
        tau = np.exp(_log_plan(f_prev, g_cur, scaled, eps)) / np.where(
            zero_cols, 1.0, tape.budgets
        )
        tau[:, zero_cols] = 0.0
        dg[zero_cols] = 0.0
        df = -(dg[None, :] * tau).sum(axis=1)
        d_index -= dg[None, :] * tau
        dg = np.zeros_like(dg)

    if not np.all(np.isfinite(d_index)):
        raise NumericalError("sinkhorn backward produced non-finite gradients")
    return d_index


@dataclass(frozen=True)
class HardAssignment:
    """Integral budget-feasible assignment plus its total index value."""

    assignment: np.ndarray
    objective: float


def solve_knapsack_exact(index: np.ndarray, budgets) -> HardAssignment:
    """Maximize total index over the transportation polytope, exactly.

    Row sums are fixed to 1 and column sums to the budgets; the constraint
    matrix is totally unimodular, so the simplex basic optimum is integral.
    Variables are ordered arm-major, which resolves ties toward the lowest
    (arm, action) pair.
    """
    index = np.asarray(index, dtype=np.float64)
    if index.ndim != 2:
        raise DataError(f"index must be a 2-d matrix, got shape {index.shape}")
    if not np.all(np.isfinite(index)):
        raise DataError("index contains NaN or Inf")
    n, a = index.shape
    budgets_arr = _check_balanced(n, budgets)

    triplets = []
    for i in range(n):
        for j in range(a):
            triplets.append((i, i * a + j, 1.0))            # row sum of arm i
            triplets.append((n + j, i * a + j, 1.0))        # column sum of action j
    senses = ["="] * (n + a)
    rhs = np.concatenate([np.ones(n), budgets_arr])
    lp = make_lp(index.reshape(-1), triplets, senses, rhs)
    result = solve_lp(lp)
    if result.status != STATUS_OPTIMAL:
        raise NumericalError(f"assignment LP ended with status {result.status!r}")
    x = result.x.reshape(n, a)
    if np.abs(x - np.round(x)).max() > 1e-6:
        raise NumericalError("assignment LP returned a non-integral vertex")
    assignment = np.argmax(x, axis=1).astype(np.int64)
    objective = float(index[np.arange(n), assignment].sum())
    return HardAssignment(assignment=assignment, objective=objective)


def repair_budget_overflow(actions, weights: np.ndarray, budgets) -> np.ndarray:
    """Make a sampled action vector budget-feasible.

    Every overfull active action demotes its lowest-weight arms to the
    passive action.  If that overfills the passive budget in turn, the
    lowest-weight passive arms are promoted into whatever slack remains,
    each taking the slack action it weights highest.  With balanced budgets
    this always terminates feasibly.
    """
    actions = np.asarray(actions, dtype=np.int64).copy()
    budgets = np.asarray(budgets, dtype=np.int64)
    n_actions = budgets.size

    counts = np.bincount(actions, minlength=n_actions)
    for a in range(1, n_actions):
        excess = int(counts[a] - budgets[a])
        if excess <= 0:
            continue
        holders = np.flatnonzero(actions == a)
        order = holders[np.lexsort((holders, weights[holders, a]))]
        actions[order[:excess]] = 0
        counts[a] -= excess
        counts[0] += excess

    excess0 = int(counts[0] - budgets[0])
    if excess0 > 0:
        slack = budgets - counts
        slack[0] = 0
        passive_arms = np.flatnonzero(actions == 0)
        order = passive_arms[np.lexsort((passive_arms, weights[passive_arms, 0]))]
        for arm in order[:excess0]:
            open_actions = np.flatnonzero(slack > 0)
            target = int(open_actions[np.argmax(weights[arm, open_actions])])
            actions[arm] = target
            slack[target] -= 1
    return actions


def plan_to_actions(
    plan: TransportPlan, mode: str, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Turn a transport plan into a budget-feasible action vector.

    mode="sample" draws each arm's action from its plan row, then repairs
    budget overflow (see repair_budget_overflow); mode="round" solves the
    exact assignment problem on log-plan scores, deterministically.
    """
    gamma = plan.gamma
    budgets = np.rint(plan.budgets).astype(np.int64)
    if mode == "round":
        scores = np.log(np.clip(gamma, 1e-300, None))
        return solve_knapsack_exact(scores, budgets).assignment
    if mode != "sample":
        raise DataError(f"unknown mode {mode!r}; use 'sample' or 'round'")
    if rng is None:
        raise DataError("mode='sample' needs a random generator")
    rows = gamma / gamma.sum(axis=1, keepdims=True)
    cum = np.cumsum(rows, axis=1)
    u = rng.random(gamma.shape[0])
    drawn = np.minimum((cum < u[:, None]).sum(axis=1), gamma.shape[1] - 1)
    return repair_budget_overflow(drawn, gamma, budgets)

"""Occupancy-measure LP for budgeted multi-action RMABs.

The decision variables are per-arm state-action occupancies w[n, s, a]: the
long-run fraction of time arm n spends in state s taking action a.  The LP
maximizes expected per-step cohort reward subject to per-action budget caps
(in expectation), per-arm flow balance, and per-arm normalization.  Its
optimum upper-bounds the long-run average reward of every budget-feasible
policy, and row-normalizing the optimal occupancy gives the oracle policy
used as a training target and simulation benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import textio
from .errors import DataError, DegenerateChainError, NumericalError
from .instances import RmabInstance
from .simplex import STATUS_OPTIMAL, LinearProgram, SimplexResult, make_lp, solve_lp

OCCUPANCY_KIND = "occupancy-measure"

# Absolute slack used when checking solution invariants; absorbs simplex
# round-off accumulated over many pivots.
INVARIANT_TOL = 1e-7


@dataclass(frozen=True)
class OccupancyMeasure:
    """LP-optimal occupancy w[n, s, a] plus the optimum (the reward bound)."""

    omega: np.ndarray
    objective_value: float

    def __post_init__(self):
        object.__setattr__(self, "omega", np.ascontiguousarray(self.omega, dtype=np.float64))
        self.omega.setflags(write=False)


def variable_index(n: int, s: int, a: int, n_states: int, n_actions: int) -> int:
    return (n * n_states + s) * n_actions + a


def build_occupancy_lp(inst: RmabInstance) -> LinearProgram:
    """Assemble the occupancy LP in sparse triplet form.

    Row layout: A budget rows (<= b_a, all actions including passive), then
    N*S flow-balance rows (=0), then N normalization rows (=1).  Variables
    are ordered arm-major, then state, then action.
    """
    N, S, A = inst.n_arms, inst.n_states, inst.n_actions
    n_vars = N * S * A
    objective = inst.rewards.reshape(-1).copy()

    triplets: list[tuple[int, int, float]] = []
    # Budget rows: sum_n sum_s w[n,s,a] <= b_a.
    for a in range(A):
        for n in range(N):
            for s in range(S):
                triplets.append((a, variable_index(n, s, a, S, A), 1.0))
    # Flow rows: sum_a w[n,s,a] - sum_{s',a'} w[n,s',a'] P_n(s | s',a') = 0.
    row = A
    for n in range(N):
        for s in range(S):
            for s2 in range(S):
                for a2 in range(A):
                    coeff = (1.0 if s2 == s else 0.0) - inst.transitions[n, s2, a2, s]
                    if coeff != 0.0:
                        triplets.append((row, variable_index(n, s2, a2, S, A), coeff))
            row += 1
    # Normalization rows: sum_{s,a} w[n,s,a] = 1.
    for n in range(N):
        for s in range(S):
            for a in range(A):
                triplets.append((row, variable_index(n, s, a, S, A), 1.0))
        row += 1

    senses = ["<="] * A + ["="] * (N * S) + ["="] * N
    rhs = np.concatenate([inst.budgets.astype(np.float64), np.zeros(N * S), np.ones(N)])
    return make_lp(objective, triplets, senses, rhs)


def solve_occupancy(inst: RmabInstance, tol: float = 1e-9) -> OccupancyMeasure:
    """Build and solve the occupancy LP; raises on a non-optimal status."""
    lp = build_occupancy_lp(inst)
    result: SimplexResult = solve_lp(lp, tol=tol)
    if result.status != STATUS_OPTIMAL:
        raise NumericalError(f"occupancy LP ended with status {result.status!r}")
    omega = np.maximum(result.x, 0.0).reshape(inst.n_arms, inst.n_states, inst.n_actions)
    return OccupancyMeasure(omega=omega, objective_value=result.objective)


def occupancy_violations(
    inst: RmabInstance, om: OccupancyMeasure, tol: float = INVARIANT_TOL
) -> list[str]:
    """Check the solution invariants; returns one message per violation."""
    problems: list[str] = []
    w = om.omega
    per_arm = w.sum(axis=(1, 2))
    for n in np.flatnonzero(np.abs(per_arm - 1.0) > tol):
        problems.append(f"arm {n}: occupancy sums to {per_arm[n]:.12g}, not 1")
    inflow = np.einsum("nta,ntas->ns", w, inst.transitions)
    outflow = w.sum(axis=2)
    bad = np.argwhere(np.abs(outflow - inflow) > tol)
    for n, s in bad:
        problems.append(
            f"arm {n} state {s}: flow imbalance {outflow[n, s] - inflow[n, s]:.3e}"
        )
    col = w.sum(axis=(0, 1))
    for a in np.flatnonzero(col > inst.budgets + tol):
        problems.append(f"action {a}: occupancy {col[a]:.12g} exceeds budget {inst.budgets[a]}")
    if np.any(w < -tol):
        n, s, a = np.argwhere(w < -tol)[0]
        problems.append(f"negative occupancy at (arm={n}, state={s}, action={a})")
    return problems


def extract_policy(om: OccupancyMeasure) -> np.ndarray:
    """Row-normalize the occupancy into per-arm conditional policies.

    Returns pi with shape (N, S, A), rows summing to 1.  States with no
    steady-state mass fall back to the uniform distribution over actions
    (the simulator still needs an action if such a state is reached).
    """
    w = om.omega
    totals = w.sum(axis=2, keepdims=True)
    n_actions = w.shape[2]
    uniform = np.full_like(w, 1.0 / n_actions)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(totals >= 1e-12, w / np.where(totals > 0, totals, 1.0), uniform)
    # Kill round-off: rows must sum to exactly 1 within 1e-9.
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum(axis=2, keepdims=True)
    return pi


def stationary_distribution(chain: np.ndarray) -> np.ndarray:
    """Stationary distribution of a row-stochastic chain (S, S).

    Solved as a linear system with the normalization replacing one balance
    equation.  Raises DegenerateChainError when the system is singular or
    the residual indicates a non-unique distribution.
    """
    S = chain.shape[0]
    a = chain.T - np.eye(S)
    a[-1, :] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    try:
        mu = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateChainError("singular stationary system") from exc
    if np.any(mu < -1e-8) or abs(mu.sum() - 1.0) > 1e-8:
        raise DegenerateChainError("stationary solve produced an invalid distribution")
    resid = np.abs(mu @ chain - mu).max()
    if resid > 1e-8:
        raise DegenerateChainError(f"stationary residual {resid:.3e}")
    return np.maximum(mu, 0.0)


def single_arm_average_reward(
    inst: RmabInstance, arm: int, policy_row: np.ndarray
) -> float:
    """Long-run average reward of one arm under a fixed stationary policy.

    policy_row has shape (S, A) with stochastic rows.  Cross-checks the LP:
    with non-binding budgets the per-arm LP contributions must match these
    chain-solve values.
    """
    policy_row = np.asarray(policy_row, dtype=np.float64)
    S, A = inst.n_states, inst.n_actions
    if policy_row.shape != (S, A):
        raise DataError(f"policy shape {policy_row.shape}, expected ({S}, {A})")
    if np.any(policy_row < -1e-12) or np.any(np.abs(policy_row.sum(axis=1) - 1.0) > 1e-9):
        raise DataError("policy rows must be stochastic")
    chain = np.einsum("sa,sat->st", policy_row, inst.transitions[arm])
    mu = stationary_distribution(chain)
    return float(np.einsum("s,sa,sa->", mu, policy_row, inst.rewards[arm]))


def write_occupancy(inst: RmabInstance, om: OccupancyMeasure, path) -> None:
    textio.write_document(
        path,
        OCCUPANCY_KIND,
        {
            "n_arms": inst.n_arms,
            "n_states": inst.n_states,
            "n_actions": inst.n_actions,
            "objective_value": om.objective_value,
            "omega": om.omega,
            "pi": extract_policy(om),
        },
    )


def read_occupancy(path) -> OccupancyMeasure:
    doc = textio.read_document(path, expect_kind=OCCUPANCY_KIND)
    n_arms = int(textio.require(doc, "n_arms", path))
    n_states = int(textio.require(doc, "n_states", path))
    n_actions = int(textio.require(doc, "n_actions", path))
    omega = textio.require(doc, "omega", path).reshape(n_arms, n_states, n_actions)
    return OccupancyMeasure(
        omega=omega, objective_value=float(textio.require(doc, "objective_value", path))
    )

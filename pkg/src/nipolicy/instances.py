"""Multi-action budgeted RMAB instances: generation, validation, dynamics, IO.

An instance is a cohort of independent MDPs ("arms") sharing a state space of
size S and an action space of size A.  Action 0 is the designated passive
action; its budget is padded so that the per-action budgets sum exactly to
the number of arms, which turns every "at most b_a arms" cap into an exact
assignment problem downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import textio
from .errors import BudgetViolationError, DataError

# Uniform mass mixed into every transition row at generation time; keeps all
# policy-induced chains irreducible.
TRANSITION_SMOOTHING = 1e-3

INSTANCE_KIND = "rmab-instance"


@dataclass(frozen=True)
class RmabInstance:
    """One cohort of arms with per-action budgets.

    transitions has shape (N, S, A, S): transitions[n, s, a] is the
    next-state distribution for arm n in state s under action a.
    rewards has shape (N, S, A) and is nonnegative.  budgets has length A
    and counts how many arms may receive each action per step.
    """

    n_arms: int
    n_states: int
    n_actions: int
    transitions: np.ndarray
    rewards: np.ndarray
    budgets: np.ndarray
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "transitions", np.ascontiguousarray(self.transitions, dtype=np.float64))
        object.__setattr__(self, "rewards", np.ascontiguousarray(self.rewards, dtype=np.float64))
        object.__setattr__(self, "budgets", np.ascontiguousarray(self.budgets, dtype=np.int64))
        expected_t = (self.n_arms, self.n_states, self.n_actions, self.n_states)
        if self.transitions.shape != expected_t:
            raise DataError(f"transitions shape {self.transitions.shape}, expected {expected_t}")
        expected_r = (self.n_arms, self.n_states, self.n_actions)
        if self.rewards.shape != expected_r:
            raise DataError(f"rewards shape {self.rewards.shape}, expected {expected_r}")
        if self.budgets.shape != (self.n_actions,):
            raise DataError(f"budgets shape {self.budgets.shape}, expected ({self.n_actions},)")
        # Instances are shared freely across evaluators; lock the arrays.
        for arr in (self.transitions, self.rewards, self.budgets):
            arr.setflags(write=False)


def generate_instance(
    n_arms: int,
    n_states: int,
    n_actions: int,
    budget_fractions,
    seed: int,
) -> RmabInstance:
    """Generate a random instance with heterogeneous arms.

    budget_fractions gives, for each active action a = 1..A-1, the fraction
    of the cohort that may receive it per step (b_a = floor(fraction * N)).
    The passive action absorbs the remainder so budgets sum to N.

    Transition rows are Dirichlet draws with ladder-shaped concentration:
    most mass sits on staying put or moving one state up or down, stronger
    actions pull up and the passive action pulls down, and everything is
    smoothed with TRANSITION_SMOOTHING uniform mass so every entry is
    strictly positive.  Rewards grow with the state and carry a mild bonus
    for stronger actions; arms differ in weight, responsiveness and decay
    rate, so holding the right arms at the top of the ladder (rather than
    spreading the budget) is what separates good policies from bad ones.
    """
    if n_arms < 1:
        raise DataError(f"n_arms must be >= 1, got {n_arms}")
    if n_states < 2:
        raise DataError(f"n_states must be >= 2, got {n_states}")
    if n_actions < 2:
        raise DataError(f"n_actions must be >= 2, got {n_actions}")
    fractions = np.asarray(budget_fractions, dtype=np.float64)
    if fractions.shape != (n_actions - 1,):
        raise DataError(
            f"budget_fractions must have length n_actions-1 = {n_actions - 1}, got {fractions.shape}"
        )
    if np.any(fractions < 0.0) or np.any(fractions > 1.0):
        raise DataError("budget_fractions entries must lie in [0, 1]")
    if fractions.sum() > 1.0 + 1e-12:
        raise DataError(f"budget_fractions sum to {fractions.sum():.6f} > 1")

    active = np.floor(fractions * n_arms).astype(np.int64)
    budgets = np.concatenate(([n_arms - active.sum()], active))

    rng = np.random.default_rng(seed)
    S, A = n_states, n_actions
    rank = np.arange(S, dtype=np.float64) / (S - 1)
    strength = np.arange(A, dtype=np.float64) / (A - 1)

    transitions = np.empty((n_arms, S, A, S))
    rewards = np.empty((n_arms, S, A))
    for n in range(n_arms):
        weight = rng.uniform(0.1, 2.5)
        shape = rng.uniform(0.6, 1.8)
        drift = rng.uniform(1.0, 6.0)      # responsiveness to treatment
        decay = rng.uniform(1.0, 6.0)      # natural decline when untreated
        for s in range(S):
            up, down = min(s + 1, S - 1), max(s - 1, 0)
            for a in range(A):
                conc = np.full(S, 0.3)
                conc[up] += 0.2 + drift * strength[a]
                conc[down] += 0.2 + decay * (1.0 - strength[a])
                conc[s] += 1.0             # stickiness: staying put is likely
                row = rng.dirichlet(conc)
                transitions[n, s, a] = (1.0 - TRANSITION_SMOOTHING) * row + TRANSITION_SMOOTHING / S
        state_value = 0.05 + 0.95 * rank**shape
        rewards[n] = weight * state_value[:, None] * (1.0 + 0.15 * strength[None, :])

    # Renormalize exactly; smoothing keeps every entry positive.
    transitions /= transitions.sum(axis=3, keepdims=True)

    return RmabInstance(
        n_arms=n_arms,
        n_states=S,
        n_actions=A,
        transitions=transitions,
        rewards=rewards,
        budgets=budgets,
        seed=seed,
    )


def validate_instance(inst: RmabInstance) -> list[str]:
    """Return human-readable descriptions of every invariant violation.

    An empty list means the instance is valid.  Validation never raises.
    """
    problems: list[str] = []
    N, S, A = inst.n_arms, inst.n_states, inst.n_actions

    row_sums = inst.transitions.sum(axis=3)
    bad = np.argwhere(np.abs(row_sums - 1.0) > 1e-9)
    for n, s, a in bad:
        problems.append(
            f"transition row (arm={n}, state={s}, action={a}) sums to {row_sums[n, s, a]:.12g}, not 1"
        )
    neg = np.argwhere(inst.transitions < 0.0)
    for n, s, a, s2 in neg:
        problems.append(f"transition entry (arm={n}, state={s}, action={a}, next={s2}) is negative")
    zero = np.argwhere(inst.transitions <= 0.0)
    if neg.size == 0:
        for n, s, a, s2 in zero:
            problems.append(
                f"transition entry (arm={n}, state={s}, action={a}, next={s2}) is zero; "
                "rows must have full support"
            )
    bad_r = np.argwhere(inst.rewards < 0.0)
    for n, s, a in bad_r:
        problems.append(f"reward (arm={n}, state={s}, action={a}) is negative")
    for a in range(A):
        if inst.budgets[a] < 0:
            problems.append(f"budget for action {a} is negative")
    total = int(inst.budgets.sum())
    if total != N:
        problems.append(f"budgets sum to {total}, expected n_arms = {N} after passive padding")
    return problems


def check_state_vector(inst: RmabInstance, states: np.ndarray) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    if states.shape != (inst.n_arms,):
        raise DataError(f"state vector shape {states.shape}, expected ({inst.n_arms},)")
    if np.any(states < 0) or np.any(states >= inst.n_states):
        bad = int(np.argmax((states < 0) | (states >= inst.n_states)))
        raise DataError(f"state {states[bad]} of arm {bad} outside [0, {inst.n_states})")
    return states


def action_counts(actions: np.ndarray, n_actions: int) -> np.ndarray:
    return np.bincount(np.asarray(actions, dtype=np.int64), minlength=n_actions)


def check_action_vector(inst: RmabInstance, actions: np.ndarray) -> np.ndarray:
    """Validate shape, range and per-action budget caps; return the vector."""
    actions = np.asarray(actions, dtype=np.int64)
    if actions.shape != (inst.n_arms,):
        raise DataError(f"action vector shape {actions.shape}, expected ({inst.n_arms},)")
    if np.any(actions < 0) or np.any(actions >= inst.n_actions):
        bad = int(np.argmax((actions < 0) | (actions >= inst.n_actions)))
        raise DataError(f"action {actions[bad]} of arm {bad} outside [0, {inst.n_actions})")
    counts = action_counts(actions, inst.n_actions)
    over = np.flatnonzero(counts > inst.budgets)
    if over.size:
        a = int(over[0])
        raise BudgetViolationError(
            f"action {a} assigned to {int(counts[a])} arms, budget is {int(inst.budgets[a])}"
        )
    return actions


def step(
    inst: RmabInstance,
    states: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance every arm one step; returns (next_states, per-arm rewards).

    Rewards are the deterministic table values r_n(s_n, a_n).  Refuses to
    step on a budget-infeasible action vector.
    """
    states = check_state_vector(inst, states)
    actions = check_action_vector(inst, actions)
    idx = np.arange(inst.n_arms)
    rows = inst.transitions[idx, states, actions]        # (N, S)
    cum = np.cumsum(rows, axis=1)
    u = rng.random(inst.n_arms)
    nxt = np.minimum((cum < u[:, None]).sum(axis=1), inst.n_states - 1)
    rewards = inst.rewards[idx, states, actions]
    return nxt.astype(np.int64), rewards


def write_instance(inst: RmabInstance, path) -> None:
    textio.write_document(
        path,
        INSTANCE_KIND,
        {
            "n_arms": inst.n_arms,
            "n_states": inst.n_states,
            "n_actions": inst.n_actions,
            "seed": inst.seed,
            "budgets": inst.budgets,
            "transitions": inst.transitions,
            "rewards": inst.rewards,
        },
    )


def read_instance(path) -> RmabInstance:
    doc = textio.read_document(path, expect_kind=INSTANCE_KIND)
    n_arms = int(textio.require(doc, "n_arms", path))
    n_states = int(textio.require(doc, "n_states", path))
    n_actions = int(textio.require(doc, "n_actions", path))
    transitions = textio.require(doc, "transitions", path).reshape(
        n_arms, n_states, n_actions, n_states
    )
    rewards = textio.require(doc, "rewards", path).reshape(n_arms, n_states, n_actions)
    return RmabInstance(
        n_arms=n_arms,
        n_states=n_states,
        n_actions=n_actions,
        transitions=transitions,
        rewards=rewards,
        budgets=textio.require(doc, "budgets", path),
        seed=int(doc.get("seed", 0)),
    )

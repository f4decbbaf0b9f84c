"""Simulation harness: oracle vs. predicted vs. random, and the gap metric.

A policy callback maps the current cohort state vector to an action vector.
``simulate_policy`` rolls the Markov dynamics forward, asserting per-step
budget feasibility unless explicitly told not to (the unconstrained random
baseline is the one caller allowed to bypass the check).  ``evaluate`` runs
all policies from shared initial states over many batches and reports mean
cumulative reward series plus the average cumulative-reward percentage gap
against the simulated oracle.  ``run_sweep`` grids over cohort sizes,
regularization strengths and seeds, training and evaluating one model per
cell.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import transport
from .errors import BudgetViolationError, DataError
from .instances import RmabInstance, check_action_vector, generate_instance, step
from .network import IndexNetwork, encode, initialize_network
from .occupancy import OccupancyMeasure, extract_policy, solve_occupancy
from .textio import format_real

# Sub-stream tags for per-batch generators.
_S0, _ORACLE_ENV, _ORACLE_POLICY, _PRED_ENV, _PRED_POLICY, _RAND_ENV, _RAND_POLICY = range(7)


@dataclass
class EvalReport:
    horizon: int
    batches: int
    oracle_cum: np.ndarray
    predicted_cum: np.ndarray | None
    random_cum: np.ndarray | None
    gap_pct: float
    random_gap_pct: float
    oracle_bound: float
    random_respects_budgets: bool
    config: dict = field(default_factory=dict)

    def write_timeseries_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("t,oracle_cum,predicted_cum,random_cum\n")
            for t in range(self.horizon):
                pred = "" if self.predicted_cum is None else format_real(self.predicted_cum[t])
                rand = "" if self.random_cum is None else format_real(self.random_cum[t])
                fh.write(f"{t + 1},{format_real(self.oracle_cum[t])},{pred},{rand}\n")


def simulate_policy(
    inst: RmabInstance,
    policy,
    s0: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
    check_budgets: bool = True,
) -> np.ndarray:
    """Per-step total cohort rewards over ``horizon`` steps.

    ``policy`` is a callable states -> actions.  A budget-violating callback
    aborts the run, naming the offending timestep.
    """
    states = np.asarray(s0, dtype=np.int64)
    rewards = np.empty(horizon)
    for t in range(horizon):
        actions = np.asarray(policy(states), dtype=np.int64)
        if check_budgets:
            try:
                check_action_vector(inst, actions)
            except BudgetViolationError as exc:
                raise BudgetViolationError(f"timestep {t}: {exc}") from exc
        if check_budgets:
            states, r = step(inst, states, actions, rng)
        else:
            # Bypass step()'s own budget check for the unconstrained baseline.
            idx = np.arange(inst.n_arms)
            rows = inst.transitions[idx, states, actions]
            cum = np.cumsum(rows, axis=1)
            u = rng.random(inst.n_arms)
            nxt = np.minimum((cum < u[:, None]).sum(axis=1), inst.n_states - 1)
            r = inst.rewards[idx, states, actions]
            states = nxt.astype(np.int64)
        rewards[t] = r.sum()
    return rewards


def oracle_policy_callback(
    om: OccupancyMeasure, inst: RmabInstance, rng: np.random.Generator
):
    """Sample per-arm actions from the oracle conditional policy, repaired.

    The LP enforces budgets only in expectation, so a raw draw can exceed a
    cap; overflow arms with the lowest probability for the overfull action
    are demoted (same repair as the transport layer), which keeps every
    step feasible at the cost of sitting slightly below the LP bound.
    """
    pi = extract_policy(om)
    arange = np.arange(inst.n_arms)

    def act(states):
        probs = pi[arange, np.asarray(states, dtype=np.int64)]    # (N, A)
        cum = np.cumsum(probs, axis=1)
        u = rng.random(inst.n_arms)
        drawn = np.minimum((cum < u[:, None]).sum(axis=1), inst.n_actions - 1)
        return transport.repair_budget_overflow(drawn, probs, inst.budgets)

    return act


def predicted_policy_callback(
    net: IndexNetwork,
    inst: RmabInstance,
    mode: str = "round",
    epsilon: float = 0.1,
    rng: np.random.Generator | None = None,
    sinkhorn_max_iter: int = transport.DEFAULT_MAX_ITER,
    sinkhorn_tol: float = transport.DEFAULT_TOL,
):
    """Deploy the trained network: scores -> feasible actions each step.

    mode="round" (default) solves the exact assignment on the raw scores
    and is deterministic given states; mode="sample" relaxes the scores
    through Sinkhorn at ``epsilon`` and samples the plan with repair.
    """
    if mode not in ("round", "sample"):
        raise DataError(f"unknown mode {mode!r}")
    if mode == "sample" and rng is None:
        raise DataError("mode='sample' needs a random generator")

    def act(states):
        index, _ = net.forward(encode(inst, states))
        if mode == "round":
            return transport.solve_knapsack_exact(index, inst.budgets).assignment
        plan = transport.sinkhorn_forward(
            index, inst.budgets, epsilon,
            max_iter=sinkhorn_max_iter, tol=sinkhorn_tol, record_tape=False,
        )
        return transport.plan_to_actions(plan, "sample", rng)

    return act


def random_policy_callback(
    inst: RmabInstance, respect_budgets: bool, rng: np.random.Generator
):
    """Uniform baseline; budget-respecting variant draws a random feasible
    assignment by solving the exact problem on uniform random scores."""

    def act_unconstrained(states):
        return rng.integers(0, inst.n_actions, size=inst.n_arms, dtype=np.int64)

    def act_feasible(states):
        scores = rng.random((inst.n_arms, inst.n_actions))
        return transport.solve_knapsack_exact(scores, inst.budgets).assignment

    return act_feasible if respect_budgets else act_unconstrained


def percentage_reward_gap(oracle_cum: np.ndarray, predicted_cum: np.ndarray) -> float:
    """Mean over timesteps of the relative cumulative-reward shortfall, in %.

    Inputs are cumulative series.  Timesteps with a nonpositive oracle
    cumulative reward are excluded (division guard); if every timestep is
    excluded the gap is undefined and NaN is returned.
    """
    oracle_cum = np.asarray(oracle_cum, dtype=np.float64)
    predicted_cum = np.asarray(predicted_cum, dtype=np.float64)
    if oracle_cum.shape != predicted_cum.shape:
        raise DataError("series lengths differ")
    keep = oracle_cum > 0.0
    if not np.any(keep):
        return float("nan")
    rel = (oracle_cum[keep] - predicted_cum[keep]) / oracle_cum[keep]
    return float(rel.mean() * 100.0)


def evaluate(
    inst: RmabInstance,
    om: OccupancyMeasure,
    net: IndexNetwork | None,
    batches: int = 50,
    horizon: int = 50,
    seed: int = 0,
    mode: str = "round",
    epsilon: float = 0.1,
    include_random: bool = True,
    random_respects_budgets: bool = True,
) -> EvalReport:
    """Simulate oracle / predicted / random policies from shared initial states.

    Every batch draws a fresh uniform initial state vector; all policies
    start from it, each with its own deterministic random stream derived
    from (seed, batch).  Mean cumulative series feed the gap metric.
    """
    oracle_steps = np.zeros(horizon)
    predicted_steps = np.zeros(horizon) if net is not None else None
    random_steps = np.zeros(horizon) if include_random else None

    for b in range(batches):
        s0 = np.random.default_rng([seed, b, _S0]).integers(
            0, inst.n_states, size=inst.n_arms, dtype=np.int64
        )
        oracle = oracle_policy_callback(
            om, inst, np.random.default_rng([seed, b, _ORACLE_POLICY])
        )
        oracle_steps += simulate_policy(
            inst, oracle, s0, horizon, np.random.default_rng([seed, b, _ORACLE_ENV])
        )
        if net is not None:
            predicted = predicted_policy_callback(
                net, inst, mode=mode, epsilon=epsilon,
                rng=np.random.default_rng([seed, b, _PRED_POLICY]),
            )
            predicted_steps += simulate_policy(
                inst, predicted, s0, horizon, np.random.default_rng([seed, b, _PRED_ENV])
            )
        if include_random:
            rand = random_policy_callback(
                inst, random_respects_budgets, np.random.default_rng([seed, b, _RAND_POLICY])
            )
            random_steps += simulate_policy(
                inst, rand, s0, horizon,
                np.random.default_rng([seed, b, _RAND_ENV]),
                check_budgets=random_respects_budgets,
            )

    oracle_cum = np.cumsum(oracle_steps / batches)
    predicted_cum = np.cumsum(predicted_steps / batches) if net is not None else None
    random_cum = np.cumsum(random_steps / batches) if include_random else None
    return EvalReport(
        horizon=horizon,
        batches=batches,
        oracle_cum=oracle_cum,
        predicted_cum=predicted_cum,
        random_cum=random_cum,
        gap_pct=percentage_reward_gap(oracle_cum, predicted_cum) if net is not None else float("nan"),
        random_gap_pct=percentage_reward_gap(oracle_cum, random_cum) if include_random else float("nan"),
        oracle_bound=om.objective_value,
        random_respects_budgets=random_respects_budgets,
        config={
            "n_arms": inst.n_arms,
            "n_states": inst.n_states,
            "n_actions": inst.n_actions,
            "epsilon": epsilon,
            "seed": seed,
            "mode": mode,
        },
    )


SUMMARY_COLUMNS = (
    "n_arms,n_states,n_actions,epsilon,seed,gap_pct,random_gap_pct,oracle_bound,status,runtime_s"
)


def summary_row(report: EvalReport, runtime_s: float, status: str = "ok") -> str:
    cfg = report.config
    return ",".join(
        [
            str(cfg.get("n_arms", "")),
            str(cfg.get("n_states", "")),
            str(cfg.get("n_actions", "")),
            format_real(cfg.get("epsilon", float("nan"))),
            str(cfg.get("seed", "")),
            format_real(report.gap_pct),
            format_real(report.random_gap_pct),
            format_real(report.oracle_bound),
            status,
            f"{runtime_s:.3f}",
        ]
    )


def write_summary_csv(rows: list[str], path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(SUMMARY_COLUMNS + "\n")
        for row in rows:
            fh.write(row + "\n")


def write_gnuplot_table(cells: list[dict], path) -> None:
    """Whitespace-delimited gap table, one row per cell, heatmap-ready."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# n_arms epsilon seed gap_pct random_gap_pct\n")
        for cell in cells:
            fh.write(
                f"{cell['n_arms']} {format_real(cell['epsilon'])} {cell['seed']} "
                f"{format_real(cell['gap_pct'])} {format_real(cell['random_gap_pct'])}\n"
            )


def _run_cell(cell_config: dict) -> dict:
    """Train and evaluate one sweep cell; never raises (errors are recorded)."""
    from .training import TrainConfig, train   # local import avoids a cycle

    out = dict(cell_config)
    started = time.perf_counter()
    try:
        inst = generate_instance(
            cell_config["n_arms"],
            cell_config["n_states"],
            cell_config["n_actions"],
            cell_config["budget_fractions"],
            seed=cell_config["instance_seed"],
        )
        om = solve_occupancy(inst)
        net = initialize_network(
            inst.n_arms + inst.n_states,
            inst.n_actions,
            hidden=cell_config.get("hidden", 64),
            seed=cell_config["seed"],
            momentum=cell_config.get("momentum", 0.9),
        )
        tc = TrainConfig(
            epochs=cell_config["epochs"],
            batch_size=cell_config["batch_size"],
            learning_rate=cell_config["learning_rate"],
            epsilon=cell_config["epsilon"],
            loss=cell_config.get("loss", "kl"),
            seed=cell_config["seed"],
        )
        train(inst, om, net, tc)
        report = evaluate(
            inst,
            om,
            net,
            batches=cell_config.get("eval_batches", 50),
            horizon=cell_config.get("eval_horizon", 50),
            seed=cell_config["seed"],
            mode=cell_config.get("eval_mode", "round"),
            epsilon=cell_config["epsilon"],
        )
        out.update(
            gap_pct=report.gap_pct,
            random_gap_pct=report.random_gap_pct,
            oracle_bound=report.oracle_bound,
            status="ok",
            report=report,
        )
    except Exception as exc:  # sweep must continue past per-cell failures
        out.update(
            gap_pct=float("nan"),
            random_gap_pct=float("nan"),
            oracle_bound=float("nan"),
            status=f"error:{type(exc).__name__}",
            report=None,
        )
    out["runtime_s"] = time.perf_counter() - started
    return out


def run_sweep(
    arm_counts,
    epsilons,
    seeds,
    n_states: int = 5,
    n_actions: int = 4,
    budget_fractions=(0.2, 0.1, 0.1),
    epochs: int = 500,
    batch_size: int = 16,
    learning_rate: float = 0.05,
    loss: str = "kl",
    eval_batches: int = 50,
    eval_horizon: int = 50,
    eval_mode: str = "round",
    hidden: int = 64,
    momentum: float = 0.9,
    jobs: int = 1,
) -> list[dict]:
    """Grid over (cohort size, epsilon, seed); one train+evaluate per cell."""
    cells = []
    for n_arms in arm_counts:
        for epsilon in epsilons:
            for seed in seeds:
                cells.append(
                    {
                        "n_arms": int(n_arms),
                        "n_states": n_states,
                        "n_actions": n_actions,
                        "budget_fractions": tuple(budget_fractions),
                        "epsilon": float(epsilon),
                        "seed": int(seed),
                        "instance_seed": int(seed),
                        "epochs": epochs,
                        "batch_size": batch_size,
                        "learning_rate": learning_rate,
                        "loss": loss,
                        "eval_batches": eval_batches,
                        "eval_horizon": eval_horizon,
                        "eval_mode": eval_mode,
                        "hidden": hidden,
                        "momentum": momentum,
                    }
                )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, cells))
    return [_run_cell(cell) for cell in cells]

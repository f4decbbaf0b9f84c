"""Finite-difference verification of every backward pass in the pipeline.

All checks compare analytic reverse-mode gradients against central finite
differences of the corresponding forward-only computation.  Sinkhorn runs
with a fixed iteration count during checks (tol=0) so both sides
differentiate the identical truncated computation.

Relative error uses a floored denominator: entries whose magnitude is below
the floor on both sides are compared at floor scale, which keeps pure
round-off noise from registering as disagreement.
"""

from __future__ import annotations

import numpy as np

from . import transport
from .instances import RmabInstance
from .network import IndexNetwork, encode, initialize_network
from .occupancy import OccupancyMeasure
from .training import kl_loss, kl_target

REL_FLOOR = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


def central_differences(fn, x0: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Gradient of scalar fn at x0 by central differences, one entry at a time."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    base = x0.copy().reshape(-1)
    for k in range(base.size):
        saved = base[k]
        base[k] = saved + step
        up = fn(base.reshape(x0.shape))
        base[k] = saved - step
        down = fn(base.reshape(x0.shape))
        base[k] = saved
        flat[k] = (up - down) / (2.0 * step)
    return grad


def check_network(seed: int = 0, n_rows: int = 3, n_inputs: int = 5, n_actions: int = 3,
                  hidden: int = 16, step: float = 1e-5) -> dict:
    """All-layer parameter gradients of a quadratic head vs. differences."""
    rng = np.random.default_rng(seed)
    net = initialize_network(n_inputs, n_actions, hidden=hidden, seed=seed)
    feats = rng.normal(size=(n_rows, n_inputs))
    target = rng.normal(size=(n_rows, n_actions))

    def loss_at(params):
        net.set_parameters(params)
        index, _ = net.forward(feats)
        return 0.5 * float(((index - target) ** 2).sum())

    p0 = net.get_parameters()
    net.set_parameters(p0)
    index, tape = net.forward(feats)
    net.zero_grad()
    net.backward(tape, index - target)
    analytic = np.concatenate(
        [g.reshape(-1) for g in net.grad_weights + net.grad_biases]
    )
    numeric = central_differences(loss_at, p0, step=step)
    net.set_parameters(p0)
    return {"name": "network-layers", "max_rel_error": relative_error(analytic, numeric),
            "n_checked": int(p0.size)}


def check_sinkhorn(seed: int = 0, n_arms: int = 4, n_actions: int = 3,
                   epsilon: float = 0.1, iterations: int = 120, step: float = 1e-5) -> dict:
    """Index gradients through the transport layer vs. differences."""
    rng = np.random.default_rng(seed)
    index = rng.normal(size=(n_arms, n_actions))
    budgets = _random_budgets(n_arms, n_actions, rng)
    weights = rng.normal(size=(n_arms, n_actions))

    def loss_at(idx):
        plan = transport.sinkhorn_forward(
            idx, budgets, epsilon, max_iter=iterations, tol=0.0, record_tape=False
        )
        return float((weights * plan.gamma).sum())

    plan = transport.sinkhorn_forward(
        index, budgets, epsilon, max_iter=iterations, tol=0.0
    )
    analytic = transport.sinkhorn_backward(plan, weights)
    numeric = central_differences(loss_at, index, step=step)
    return {"name": "sinkhorn-layer", "max_rel_error": relative_error(analytic, numeric),
            "n_checked": int(index.size)}


def check_full_chain(
    inst: RmabInstance,
    om: OccupancyMeasure,
    states,
    hidden: int = 16,
    epsilon: float = 0.1,
    iterations: int = 120,
    seed: int = 0,
    step: float = 1e-5,
) -> dict:
    """d(divergence loss)/d(parameters) for encode->net->sinkhorn->loss."""
    states = np.asarray(states, dtype=np.int64)
    net = initialize_network(inst.n_arms + inst.n_states, inst.n_actions,
                             hidden=hidden, seed=seed)
    feats = encode(inst, states)
    target = kl_target(om, states)

    def loss_at(params):
        net.set_parameters(params)
        index, _ = net.forward(feats)
        plan = transport.sinkhorn_forward(
            index, inst.budgets, epsilon, max_iter=iterations, tol=0.0, record_tape=False
        )
        value, _ = kl_loss(plan.gamma, target)
        return value

    p0 = net.get_parameters()
    net.set_parameters(p0)
    index, tape = net.forward(feats)
    plan = transport.sinkhorn_forward(
        index, inst.budgets, epsilon, max_iter=iterations, tol=0.0
    )
    _, d_gamma = kl_loss(plan.gamma, target)
    d_index = transport.sinkhorn_backward(plan, d_gamma)
    net.zero_grad()
    net.backward(tape, d_index)
    analytic = np.concatenate(
        [g.reshape(-1) for g in net.grad_weights + net.grad_biases]
    )
    numeric = central_differences(loss_at, p0, step=step)
    net.set_parameters(p0)
    return {"name": "full-chain", "max_rel_error": relative_error(analytic, numeric),
            "n_checked": int(p0.size)}


def _random_budgets(n_arms: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    """Random composition of n_arms into n_actions parts, all positive when
    the arm count allows it."""
    if n_arms < n_actions:
        cuts = np.sort(rng.integers(0, n_arms + 1, size=n_actions - 1))
        return np.diff(np.concatenate([[0], cuts, [n_arms]]))
    while True:
        cuts = np.sort(rng.integers(1, n_arms, size=n_actions - 1))
        budgets = np.diff(np.concatenate([[0], cuts, [n_arms]]))
        if np.all(budgets >= 1):
            return budgets

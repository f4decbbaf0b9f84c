import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nipolicy import generate_instance, solve_occupancy


@pytest.fixture(scope="session")
def small_instance():
    """4 arms, 3 states, 3 actions; budgets [2, 1, 1]."""
    return generate_instance(4, 3, 3, [0.3, 0.25], seed=11)


@pytest.fixture(scope="session")
def small_occupancy(small_instance):
    return solve_occupancy(small_instance)


@pytest.fixture(scope="session")
def medium_instance():
    """10 arms, 4 states, 3 actions; used where a bit more structure helps."""
    return generate_instance(10, 4, 3, [0.3, 0.2], seed=23)


@pytest.fixture(scope="session")
def medium_occupancy(medium_instance):
    return solve_occupancy(medium_instance)


def identity_instance(n_arms=3, n_states=2, n_actions=2, budgets=None, rewards=None):
    """Hand-built instance with identity transitions (state never moves).

    Deliberately violates the full-support invariant; handy for exercising
    step() and simulators with exactly predictable dynamics.
    """
    from nipolicy.instances import RmabInstance

    transitions = np.zeros((n_arms, n_states, n_actions, n_states))
    for s in range(n_states):
        transitions[:, s, :, s] = 1.0
    if rewards is None:
        rng = np.random.default_rng(5)
        rewards = rng.random((n_arms, n_states, n_actions))
    if budgets is None:
        budgets = [n_arms - 1, 1] + [0] * (n_actions - 2)
    return RmabInstance(
        n_arms=n_arms,
        n_states=n_states,
        n_actions=n_actions,
        transitions=transitions,
        rewards=np.asarray(rewards, dtype=np.float64),
        budgets=np.asarray(budgets, dtype=np.int64),
        seed=0,
    )
